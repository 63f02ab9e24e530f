#include "clawno/field_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>

namespace clawno {

static_assert(std::endian::native == std::endian::little,
              "the on-disk format is little endian and written without byte swapping");

namespace {

constexpr std::array<char, 8> kMagic = {'C', 'L', 'A', 'W', 'F', 'L', 'D', '\0'};

void check_stream(std::ios& s, const char* what) {
    if (!s) throw IoError(std::string("I/O failure while ") + what);
}

}  // namespace

void write_header(std::ostream& out, BlobKind kind) {
    out.write(kMagic.data(), kMagic.size());
    const std::uint32_t words[2] = {kFormatVersion, static_cast<std::uint32_t>(kind)};
    out.write(reinterpret_cast<const char*>(words), sizeof(words));
    check_stream(out, "writing header");
}

BlobKind read_header(std::istream& in) {
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    std::uint32_t words[2] = {0, 0};
    in.read(reinterpret_cast<char*>(words), sizeof(words));
    check_stream(in, "reading header");
    if (magic != kMagic) throw IoError("bad magic: not a clawno binary file");
    if (words[0] != kFormatVersion)
        throw IoError("unsupported format version " + std::to_string(words[0]));
    if (words[1] > 1) throw IoError("unknown payload kind " + std::to_string(words[1]));
    return static_cast<BlobKind>(words[1]);
}

void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    check_stream(in, "reading integer");
    return v;
}

void write_f64s(std::ostream& out, std::span<const double> v) {
    out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size_bytes()));
}

void read_f64s(std::istream& in, std::span<double> v) {
    in.read(reinterpret_cast<char*>(v.data()), std::streamsize(v.size_bytes()));
    check_stream(in, "reading payload");
}

void write_field(const Field& field, std::ostream& out) {
    std::vector<std::size_t> counts;
    if (auto* g = field.domain().periodic()) {
        counts = g->counts();
    } else if (auto* b = field.domain().box()) {
        counts = b->counts();
    } else {
        throw IoError("only grid fields can be written in the binary field format");
    }
    write_header(out, BlobKind::GridField);
    write_u64(out, counts.size());
    write_u64(out, field.channels());
    for (auto n : counts) write_u64(out, n);
    write_f64s(out, field.values());
    check_stream(out, "writing field");
}

void save_field(const Field& field, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write_field(field, out);
    out.flush();
    check_stream(out, "flushing field file");
}

GridFieldBlob read_field_blob(std::istream& in) {
    if (read_header(in) != BlobKind::GridField) throw IoError("file does not hold a grid field");
    GridFieldBlob blob;
    const auto p = read_u64(in);
    blob.channels = read_u64(in);
    if (p == 0 || p > 16 || blob.channels == 0) throw IoError("corrupt field dimensions");
    std::size_t total = blob.channels;
    for (std::uint64_t k = 0; k < p; ++k) {
        blob.counts.push_back(read_u64(in));
        total *= blob.counts.back();
    }
    blob.values.resize(total);
    read_f64s(in, blob.values);
    return blob;
}

GridFieldBlob load_field_blob(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return read_field_blob(in);
}

Field load_field(const std::filesystem::path& path, const std::vector<double>& lengths) {
    auto blob = load_field_blob(path);
    PeriodicGrid grid(lengths, blob.counts);
    return Field(std::move(grid), blob.channels, std::move(blob.values));
}

void write_csv_slice(const Field& field, std::size_t channel, std::ostream& out,
                     std::span<const std::size_t> fixed) {
    const auto* g = field.domain().periodic();
    if (!g) throw IoError("CSV slices are defined for periodic grid fields");
    if (g->dim() < 2) throw IoError("CSV slices need at least two axes");
    if (fixed.size() != g->dim() - 2)
        throw IoError("expected one fixed index per axis beyond the first two");
    auto vals = field.channel(channel);
    std::vector<std::size_t> idx(g->dim(), 0);
    for (std::size_t k = 2; k < g->dim(); ++k) idx[k] = fixed[k - 2];
    out << std::setprecision(17);
    for (std::size_t i = 0; i < g->count(0); ++i) {
        idx[0] = i;
        for (std::size_t j = 0; j < g->count(1); ++j) {
            idx[1] = j;
            if (j) out << ',';
            out << vals[g->ravel(idx)];
        }
        out << '\n';
    }
}

std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (auto b : bytes) {
        h ^= static_cast<std::uint64_t>(b);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t seed) {
    return fnv1a(std::as_bytes(std::span(text.data(), text.size())), seed);
}

}  // namespace clawno
