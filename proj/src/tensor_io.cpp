#include "adaptparse/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "the .tsr format is little-endian; payloads are copied verbatim");

namespace adaptparse {

namespace {

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::uint8_t kVersion = 0x01;

void put_u64(std::ostream& os, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf, 8);
}

std::uint64_t get_u64(std::istream& is) {
    char buf[8];
    is.read(buf, 8);
    if (!is) throw IoError("truncated payload: short read in dims");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
}

}  // namespace

void tensor_write(const Tensor& t, std::ostream& os) {
    os.write(kMagic, 4);
    const char version = static_cast<char>(kVersion);
    os.put(version);
    os.put(static_cast<char>(t.dtype()));
    os.put(static_cast<char>(t.rank()));
    const char pad[4] = {0, 0, 0, 0};
    os.write(pad, 4);
    for (auto d : t.dims()) put_u64(os, static_cast<std::uint64_t>(d));
    const auto bytes = t.bytes();
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("tensor write failed");
}

void tensor_write(const Tensor& t, const std::filesystem::path& path) {
    std::ostringstream buf(std::ios::binary);
    tensor_write(t, buf);
    write_file_atomic(path, buf.str());
}

Tensor tensor_read(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("bad magic: not a TNSR file");
    }
    const int version = is.get();
    if (version != kVersion) {
        throw IoError("unsupported TNSR version " + std::to_string(version));
    }
    const int dtype_code = is.get();
    if (dtype_code != 0 && dtype_code != 1 && dtype_code != 2) {
        throw IoError("unknown dtype code " + std::to_string(dtype_code));
    }
    const int rank = is.get();
    if (rank < 1 || rank > 4) {
        throw IoError("bad tensor rank " + std::to_string(rank));
    }
    char pad[4];
    is.read(pad, 4);
    if (!is) throw IoError("truncated payload: short header");
    std::vector<std::int64_t> dims;
    dims.reserve(static_cast<std::size_t>(rank));
    for (int i = 0; i < rank; ++i) dims.push_back(static_cast<std::int64_t>(get_u64(is)));
    Tensor t(dims, static_cast<DType>(dtype_code));
    auto bytes = t.bytes();
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw IoError("truncated payload: expected " + std::to_string(bytes.size()) + " data bytes");
    }
    return t;
}

Tensor tensor_read(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    return tensor_read(f);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
        f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!f) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename " + tmp.string() + " -> " + path.string() + ": " + ec.message());
}

}  // namespace adaptparse
