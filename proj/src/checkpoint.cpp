#include "vispec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace vispec {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    auto n = read_pod<std::uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterStore& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path.string());
    os.write("VSPC", 4);
    write_pod<std::uint32_t>(os, kCheckpointVersion);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.all().size()));
    // Manifest first; offsets are relative to the start of the data section.
    std::uint64_t offset = 0;
    for (const auto& [name, t] : params.all()) {
        write_string(os, name);
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().size()));
        for (std::size_t d : t.shape()) write_pod<std::uint64_t>(os, d);
        write_pod<std::uint64_t>(os, offset);
        offset += t.size() * sizeof(float);
    }
    for (const auto& [name, t] : params.all()) {
        for (double v : t.data()) write_pod<float>(os, static_cast<float>(v));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path.string());
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "VSPC", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic: " + path.string());
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version");
    const auto count = read_pod<std::uint32_t>(is);
    struct Entry {
        std::string name;
        std::vector<std::size_t> shape;
        std::uint64_t offset;
        std::size_t numel;
    };
    std::vector<Entry> entries(count);
    for (auto& e : entries) {
        e.name = read_string(is);
        const auto ndim = read_pod<std::uint32_t>(is);
        e.numel = 1;
        for (std::uint32_t i = 0; i < ndim; ++i) {
            e.shape.push_back(static_cast<std::size_t>(read_pod<std::uint64_t>(is)));
            e.numel *= e.shape.back();
        }
        e.offset = read_pod<std::uint64_t>(is);
    }
    const auto data_start = is.tellg();
    ParameterStore store;
    for (const auto& e : entries) {
        is.seekg(data_start + static_cast<std::streamoff>(e.offset));
        std::vector<double> data(e.numel);
        for (std::size_t i = 0; i < e.numel; ++i)
            data[i] = static_cast<double>(read_pod<float>(is));
        store.add(e.name, Tensor::from(e.shape, std::move(data)));
    }
    return store;
}

} // namespace vispec
