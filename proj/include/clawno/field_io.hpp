#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "clawno/geometry.hpp"

namespace clawno {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Kinds of payload carried by the shared 16-byte header.
enum class BlobKind : std::uint32_t { GridField = 0, MeshfreeWeights = 1 };

inline constexpr std::uint32_t kFormatVersion = 1;

// Header: 8-byte magic "CLAWFLD\0", u32 version, u32 kind, all little endian.
void write_header(std::ostream& out, BlobKind kind);
BlobKind read_header(std::istream& in);

void write_u64(std::ostream& out, std::uint64_t v);
std::uint64_t read_u64(std::istream& in);
void write_f64s(std::ostream& out, std::span<const double> v);
void read_f64s(std::istream& in, std::span<double> v);

/// Raw contents of a grid field file.
struct GridFieldBlob {
    std::vector<std::size_t> counts;
    std::size_t channels = 0;
    std::vector<double> values;
};

/**
 * Writes a grid field: header, u64 dims [p, c, N_1..N_p], then the float64
 * payload in the field's channel-major layout.
 */
void save_field(const Field& field, const std::filesystem::path& path);
void write_field(const Field& field, std::ostream& out);

GridFieldBlob read_field_blob(std::istream& in);
GridFieldBlob load_field_blob(const std::filesystem::path& path);

/// Loads a grid field and attaches it to a periodic grid with the given lengths.
Field load_field(const std::filesystem::path& path, const std::vector<double>& lengths);

/// CSV dump of a 2D slice (rows: axis 0, columns: axis 1). For p > 2 the
/// remaining axes are held at `fixed` (one index per extra axis).
void write_csv_slice(const Field& field, std::size_t channel, std::ostream& out,
                     std::span<const std::size_t> fixed = {});

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace clawno
