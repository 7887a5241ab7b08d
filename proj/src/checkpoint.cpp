#include "adaptparse/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "adaptparse/tensor_io.hpp"

namespace adaptparse {

namespace {

constexpr char kMagic[4] = {'C', 'K', 'P', 'T'};
constexpr std::uint8_t kVersion = 0x01;

void put_u64(std::ostream& os, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(buf, 8);
}

std::uint64_t get_u64(std::istream& is) {
    char buf[8];
    is.read(buf, 8);
    if (!is) throw IoError("truncated payload: short read in checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
    return v;
}

}  // namespace

void checkpoint_write(const NamedTensors& records, const std::filesystem::path& path) {
    std::ostringstream os(std::ios::binary);
    os.write(kMagic, 4);
    os.put(static_cast<char>(kVersion));
    put_u64(os, records.size());
    for (const auto& [name, tensor] : records) {
        put_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        tensor_write(tensor, os);
    }
    write_file_atomic(path, os.str());
}

NamedTensors checkpoint_read(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("bad magic: not a CKPT file: " + path.string());
    }
    const int version = is.get();
    if (version != kVersion) {
        throw IoError("checkpoint version mismatch: file has " + std::to_string(version) +
                      ", expected " + std::to_string(kVersion));
    }
    const std::uint64_t count = get_u64(is);
    NamedTensors records;
    records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = get_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw IoError("truncated payload: checkpoint record name " + std::to_string(i));
        try {
            records.emplace_back(std::move(name), tensor_read(is));
        } catch (const IoError& e) {
            throw IoError("truncated payload: record " + std::to_string(i) + ": " + e.what());
        }
    }
    return records;
}

const Tensor& checkpoint_find(const NamedTensors& records, const std::string& name) {
    for (const auto& [n, t] : records) {
        if (n == name) return t;
    }
    throw IoError("checkpoint is missing tensor '" + name + "'");
}

}  // namespace adaptparse
