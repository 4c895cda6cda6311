#include <bit>
#include <cstring>
#include <fstream>

#include "nadjust/errors.hpp"
#include "nadjust/tensor.hpp"

namespace nadjust {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts unsupported");

std::string Tensor4::shape_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

namespace {
constexpr char kMagic[8] = {'N', 'A', 'D', 'J', 'T', 'E', 'N', 'S'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF64 = 0;
}  // namespace

void write_tensor(const std::string& path, const Tensor4& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write tensor file: " + path);
    out.write(kMagic, 8);
    uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    uint8_t dtype = kDtypeF64, ndim = 4;
    out.write(reinterpret_cast<const char*>(&dtype), 1);
    out.write(reinterpret_cast<const char*>(&ndim), 1);
    uint32_t dims[4] = {static_cast<uint32_t>(t.n), static_cast<uint32_t>(t.c),
                        static_cast<uint32_t>(t.h), static_cast<uint32_t>(t.w)};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!out.good()) throw std::runtime_error("short write: " + path);
}

Tensor4 read_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open tensor file: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in.good() || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error(path + ": not a tensor file (bad magic)");
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != kVersion)
        throw std::runtime_error(path + ": unsupported tensor file version " +
                                 std::to_string(version));
    uint8_t dtype = 0, ndim = 0;
    in.read(reinterpret_cast<char*>(&dtype), 1);
    in.read(reinterpret_cast<char*>(&ndim), 1);
    if (dtype != kDtypeF64 || ndim != 4)
        throw std::runtime_error(path + ": unsupported dtype/ndim");
    uint32_t dims[4];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!in.good()) throw std::runtime_error(path + ": truncated header");
    Tensor4 t(static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2]),
              static_cast<int>(dims[3]));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in.good()) throw std::runtime_error(path + ": truncated payload");
    return t;
}

}  // namespace nadjust
