#include "latt/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace latt {

namespace {

constexpr char kMagic[4] = {'L', 'A', 'T', 'T'};
constexpr std::uint8_t kVersion = 1;

void write_u64_le(std::ofstream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::ifstream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_tensor: cannot open " + path.string());
    out.write(kMagic, 4);
    const std::uint8_t header[4] = {kVersion, static_cast<std::uint8_t>(t.dtype()),
                                    static_cast<std::uint8_t>(t.ndim()), 0};
    out.write(reinterpret_cast<const char*>(header), 4);
    for (std::size_t d : t.dims()) write_u64_le(out, d);
    // elements are stored little-endian; this writer targets little-endian hosts
    out.write(reinterpret_cast<const char*>(t.raw()), static_cast<std::streamsize>(t.raw_size()));
    if (!out) throw std::runtime_error("save_tensor: write failed for " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_tensor: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("load_tensor: bad magic in " + path.string());
    std::uint8_t header[4];
    in.read(reinterpret_cast<char*>(header), 4);
    if (header[0] != kVersion) throw std::runtime_error("load_tensor: unsupported version");
    if (header[1] > 1) throw std::runtime_error("load_tensor: unknown dtype code");
    const DType dt = static_cast<DType>(header[1]);
    const std::size_t ndim = header[2];
    std::vector<std::size_t> dims(ndim);
    for (std::size_t i = 0; i < ndim; ++i) dims[i] = read_u64_le(in);
    Tensor t(dims, dt);
    in.read(reinterpret_cast<char*>(t.raw()), static_cast<std::streamsize>(t.raw_size()));
    if (!in) throw std::runtime_error("load_tensor: truncated file " + path.string());
    return t;
}

void save_manifest(const std::vector<std::pair<std::string, Tensor>>& entries,
                   const std::filesystem::path& dir, const std::string& manifest_name) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / manifest_name, std::ios::binary);
    if (!out) throw std::runtime_error("save_manifest: cannot open manifest in " + dir.string());
    for (const auto& [name, tensor] : entries) {
        const std::string file = name + ".latt";
        save_tensor(tensor, dir / file);
        out << name << " = " << file << "\n";
    }
}

std::vector<std::pair<std::string, Tensor>> load_manifest(const std::filesystem::path& dir,
                                                          const std::string& manifest_name) {
    std::ifstream in(dir / manifest_name);
    if (!in) throw std::runtime_error("load_manifest: cannot open manifest in " + dir.string());
    std::vector<std::pair<std::string, Tensor>> entries;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto sep = line.find(" = ");
        if (sep == std::string::npos) throw std::runtime_error("load_manifest: malformed line: " + line);
        const std::string name = line.substr(0, sep);
        const std::string file = line.substr(sep + 3);
        entries.emplace_back(name, load_tensor(dir / file));
    }
    return entries;
}

}  // namespace latt
