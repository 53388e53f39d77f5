#include "qplan/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace qplan {

namespace {

constexpr char kMagic[4] = {'Q', 'D', 'T', '1'};

class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    void le(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i) {
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
    bool has(std::size_t n) const { return pos_ + n <= b_.size(); }
    std::size_t remaining() const { return b_.size() - pos_; }
    std::uint64_t le(int n)
    {
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(b_[pos_++]) << (8 * i);
        }
        return v;
    }

private:
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

struct Header {
    std::vector<std::uint64_t> dims;
    DType dtype = DType::F32;
};

void write_header(Writer& w, Index rows, Index cols, DType dtype)
{
    w.bytes(kMagic, 4);
    w.u16(kTensorVersion);
    w.u16(2);
    w.u64(static_cast<std::uint64_t>(rows));
    w.u64(static_cast<std::uint64_t>(cols));
    w.u8(static_cast<std::uint8_t>(dtype));
}

Header read_header(Reader& r, const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw Error(ErrorCode::FormatError, "bad magic, expected \"QDT1\"");
    }
    r.le(4);
    if (!r.has(4)) {
        throw Error(ErrorCode::CorruptFile, "truncated header");
    }
    const auto version = static_cast<std::uint16_t>(r.le(2));
    if (version != kTensorVersion) {
        throw Error(ErrorCode::FormatError, "unsupported tensor version " + std::to_string(version));
    }
    const auto ndim = static_cast<std::uint16_t>(r.le(2));
    if (ndim < 1 || ndim > 2) {
        throw Error(ErrorCode::FormatError, "unsupported rank " + std::to_string(ndim));
    }
    if (!r.has(8U * ndim + 1U)) {
        throw Error(ErrorCode::CorruptFile, "truncated header");
    }
    Header h;
    for (int i = 0; i < ndim; ++i) {
        h.dims.push_back(r.le(8));
    }
    const auto code = static_cast<std::uint8_t>(r.le(1));
    if (code > 2) {
        throw Error(ErrorCode::FormatError, "unknown dtype code " + std::to_string(code));
    }
    h.dtype = static_cast<DType>(code);
    return h;
}

std::size_t dtype_size(DType d)
{
    return d == DType::F64 ? 8U : 4U;
}

std::pair<Index, Index> shape_of(const Header& h)
{
    const auto rows = static_cast<Index>(h.dims[0]);
    const auto cols = h.dims.size() == 2 ? static_cast<Index>(h.dims[1]) : Index{1};
    return {rows, cols};
}

void check_payload(const Reader& r, const Header& h)
{
    const auto [rows, cols] = shape_of(h);
    const std::size_t need = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * dtype_size(h.dtype);
    if (r.remaining() < need) {
        throw Error(ErrorCode::CorruptFile, "payload truncated: need " + std::to_string(need) +
                                                " bytes, have " + std::to_string(r.remaining()));
    }
    if (r.remaining() > need) {
        throw Error(ErrorCode::CorruptFile, "trailing bytes after payload");
    }
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Matrix& m, DType dtype)
{
    Writer w;
    write_header(w, m.rows(), m.cols(), dtype);
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            switch (dtype) {
            case DType::F32:
                w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(m(i, j))));
                break;
            case DType::F64:
                w.u64(std::bit_cast<std::uint64_t>(m(i, j)));
                break;
            case DType::I32:
                w.u32(static_cast<std::uint32_t>(static_cast<std::int32_t>(std::lround(m(i, j)))));
                break;
            }
        }
    }
    return w.take();
}

std::vector<std::uint8_t> encode_tensor(const IntMatrix& m)
{
    Writer w;
    write_header(w, m.rows(), m.cols(), DType::I32);
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j)
            w.u32(static_cast<std::uint32_t>(m(i, j)));
    return w.take();
}

Matrix decode_tensor(const std::vector<std::uint8_t>& bytes)
{
    Reader r(bytes);
    const Header h = read_header(r, bytes);
    check_payload(r, h);
    const auto [rows, cols] = shape_of(h);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            switch (h.dtype) {
            case DType::F32:
                m(i, j) = std::bit_cast<float>(static_cast<std::uint32_t>(r.le(4)));
                break;
            case DType::F64:
                m(i, j) = std::bit_cast<double>(r.le(8));
                break;
            case DType::I32:
                m(i, j) = static_cast<std::int32_t>(static_cast<std::uint32_t>(r.le(4)));
                break;
            }
        }
    }
    return m;
}

IntMatrix decode_int_tensor(const std::vector<std::uint8_t>& bytes)
{
    Reader r(bytes);
    const Header h = read_header(r, bytes);
    if (h.dtype != DType::I32) {
        throw Error(ErrorCode::FormatError, "expected an int32 tensor");
    }
    check_payload(r, h);
    const auto [rows, cols] = shape_of(h);
    IntMatrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j)
            m(i, j) = static_cast<std::int32_t>(static_cast<std::uint32_t>(r.le(4)));
    return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::IoError, "cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error(ErrorCode::IoError, "write failed for " + path.string());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path)
{
    const auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

void write_tensor(const Matrix& m, const std::filesystem::path& path, DType dtype)
{
    write_file(path, encode_tensor(m, dtype));
}

void write_tensor(const IntMatrix& m, const std::filesystem::path& path)
{
    write_file(path, encode_tensor(m));
}

Matrix read_tensor(const std::filesystem::path& path)
{
    return decode_tensor(read_file(path));
}

IntMatrix read_int_tensor(const std::filesystem::path& path)
{
    return decode_int_tensor(read_file(path));
}

Matrix to_float_precision(const Matrix& m)
{
    return m.cast<float>().cast<double>();
}

}  // namespace qplan
