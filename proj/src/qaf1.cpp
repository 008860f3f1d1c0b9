#include "qaf/qaf1.hpp"

#include <cstdio>
#include <fstream>
#include <limits>

#include "qaf/errors.hpp"

namespace qaf {

namespace {

constexpr char kMagic[4] = {'Q', 'A', 'F', '1'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

    std::uint8_t u8() {
        need(1, "u8");
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }

    std::uint16_t u16() {
        need(2, "u16");
        std::uint16_t v = static_cast<std::uint8_t>(bytes_[pos_]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes_[pos_ + 1])) << 8);
        pos_ += 2;
        return v;
    }

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::string str(std::size_t n) {
        need(n, "name");
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n)
            throw FormatError(path_ + ": truncated container (while reading " + what + ")");
    }

    const std::string& bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

TensorRecord TensorRecord::from_matrix(const std::string& name, const Matrix& m) {
    TensorRecord r;
    r.name = name;
    r.dtype = Dtype::F32;
    r.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    r.f32.reserve(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) r.f32.push_back(static_cast<float>(m.data()[i]));
    return r;
}

TensorRecord TensorRecord::from_vector(const std::string& name, const std::vector<double>& v) {
    TensorRecord r;
    r.name = name;
    r.dtype = Dtype::F32;
    r.dims = {static_cast<std::uint32_t>(v.size())};
    r.f32.reserve(v.size());
    for (double x : v) r.f32.push_back(static_cast<float>(x));
    return r;
}

TensorRecord TensorRecord::from_scalar(const std::string& name, double v) {
    return from_vector(name, std::vector<double>{v});
}

TensorRecord TensorRecord::from_u32(const std::string& name, const std::vector<std::uint32_t>& v) {
    TensorRecord r;
    r.name = name;
    r.dtype = Dtype::U32;
    r.dims = {static_cast<std::uint32_t>(v.size())};
    r.u32 = v;
    return r;
}

Matrix TensorRecord::to_matrix() const {
    if (dtype != Dtype::F32 || dims.size() != 2)
        throw FormatError("record '" + name + "': expected rank-2 f32 tensor");
    Matrix m(dims[0], dims[1]);
    for (std::size_t i = 0; i < f32.size(); ++i) m.data()[i] = static_cast<double>(f32[i]);
    return m;
}

std::vector<double> TensorRecord::to_vector() const {
    if (dtype != Dtype::F32) throw FormatError("record '" + name + "': expected f32 tensor");
    return std::vector<double>(f32.begin(), f32.end());
}

double TensorRecord::to_scalar() const {
    if (dtype != Dtype::F32 || element_count() != 1)
        throw FormatError("record '" + name + "': expected a single f32 value");
    return static_cast<double>(f32[0]);
}

void write_container(const std::string& path, const std::vector<TensorRecord>& records) {
    if (records.size() > std::numeric_limits<std::uint16_t>::max())
        throw FormatError(path + ": too many records for the QAF1 container");
    std::string out;
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    put_u16(out, static_cast<std::uint16_t>(records.size()));
    for (const auto& r : records) {
        if (r.name.empty() || r.name.size() > 255)
            throw FormatError(path + ": record name length must be in [1, 255]");
        std::size_t count = r.element_count();
        std::size_t stored = r.dtype == Dtype::F32 ? r.f32.size() : r.u32.size();
        if (stored != count)
            throw FormatError(path + ": record '" + r.name + "' payload does not match dims");
        out.push_back(static_cast<char>(r.name.size()));
        out.append(r.name);
        out.push_back(static_cast<char>(r.dtype));
        out.push_back(static_cast<char>(r.dims.size()));
        for (auto d : r.dims) put_u32(out, d);
        if (r.dtype == Dtype::F32) {
            for (float f : r.f32) {
                std::uint32_t bits;
                static_assert(sizeof(bits) == sizeof(f));
                __builtin_memcpy(&bits, &f, 4);
                put_u32(out, bits);
            }
        } else {
            for (std::uint32_t v : r.u32) put_u32(out, v);
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError(path + ": cannot open for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw FormatError(path + ": write failed");
}

std::vector<TensorRecord> read_container(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError(path + ": cannot open");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader rd(bytes, path);
    if (rd.str(4) != std::string(kMagic, 4)) throw FormatError(path + ": bad magic, not a QAF1 container");
    std::uint16_t version = rd.u16();
    if (version != kVersion)
        throw FormatError(path + ": unsupported container version " + std::to_string(version));
    std::uint16_t count = rd.u16();

    std::vector<TensorRecord> records;
    records.reserve(count);
    for (std::uint16_t i = 0; i < count; ++i) {
        TensorRecord r;
        std::uint8_t name_len = rd.u8();
        if (name_len == 0) throw FormatError(path + ": empty record name");
        r.name = rd.str(name_len);
        std::uint8_t dtype = rd.u8();
        if (dtype > 1) throw FormatError(path + ": record '" + r.name + "' has unknown dtype");
        r.dtype = static_cast<Dtype>(dtype);
        std::uint8_t rank = rd.u8();
        if (rank > 8) throw FormatError(path + ": record '" + r.name + "' has implausible rank");
        std::size_t n = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            std::uint32_t dim = rd.u32();
            r.dims.push_back(dim);
            if (dim != 0 && n > (std::size_t(1) << 31) / dim)
                throw FormatError(path + ": record '" + r.name + "' dims overflow");
            n *= dim;
        }
        if (rd.remaining() < 4 * n)
            throw FormatError(path + ": record '" + r.name + "' payload truncated");
        if (r.dtype == Dtype::F32) {
            r.f32.resize(n);
            for (std::size_t j = 0; j < n; ++j) {
                std::uint32_t bits = rd.u32();
                float v;
                __builtin_memcpy(&v, &bits, 4);
                r.f32[j] = v;
            }
        } else {
            r.u32.resize(n);
            for (std::size_t j = 0; j < n; ++j) r.u32[j] = rd.u32();
        }
        records.push_back(std::move(r));
    }
    if (rd.remaining() != 0) throw FormatError(path + ": trailing bytes after last record");
    return records;
}

RecordMap::RecordMap(std::vector<TensorRecord> records) : records_(std::move(records)) {}

const TensorRecord& RecordMap::get(const std::string& name) const {
    for (const auto& r : records_) {
        if (r.name == name) return r;
    }
    throw FormatError("missing record '" + name + "'");
}

bool RecordMap::has(const std::string& name) const {
    for (const auto& r : records_) {
        if (r.name == name) return true;
    }
    return false;
}

}  // namespace qaf
