#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qaf/matrix.hpp"

namespace qaf {

// QAF1 binary container: the one on-disk format shared by quantizer stacks,
// detector models, and trial sets.
//
// Layout (all integers little-endian):
//   magic "QAF1" | u16 version (=1) | u16 record count
//   per record:
//     u8 name length | name bytes | u8 dtype (0=f32, 1=u32) | u8 rank |
//     rank x u32 dims | payload (product(dims) x 4 bytes)
// No padding, no trailing bytes.

enum class Dtype : std::uint8_t { F32 = 0, U32 = 1 };

struct TensorRecord {
    std::string name;
    Dtype dtype = Dtype::F32;
    std::vector<std::uint32_t> dims;
    std::vector<float> f32;          // valid when dtype == F32
    std::vector<std::uint32_t> u32;  // valid when dtype == U32

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }

    static TensorRecord from_matrix(const std::string& name, const Matrix& m);
    static TensorRecord from_vector(const std::string& name, const std::vector<double>& v);
    static TensorRecord from_scalar(const std::string& name, double v);
    static TensorRecord from_u32(const std::string& name, const std::vector<std::uint32_t>& v);

    Matrix to_matrix() const;                // requires rank 2, f32
    std::vector<double> to_vector() const;   // requires f32
    double to_scalar() const;                // requires f32, one element
};

void write_container(const std::string& path, const std::vector<TensorRecord>& records);
std::vector<TensorRecord> read_container(const std::string& path);

// Name-indexed access with FormatError on missing records.
class RecordMap {
public:
    explicit RecordMap(std::vector<TensorRecord> records);
    const TensorRecord& get(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::vector<TensorRecord>& all() const { return records_; }

private:
    std::vector<TensorRecord> records_;
};

}  // namespace qaf
