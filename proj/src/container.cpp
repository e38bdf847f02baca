#include "goalcap/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace goalcap {
namespace {

constexpr char kMagic[8] = {'G', 'C', 'A', 'P', 'T', 'N', 'S', 'R'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw ContainerError("container: truncated data");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
};

}  // namespace

std::vector<std::uint8_t> encode_container(const std::vector<NamedTensor>& tensors) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32(out, kContainerVersion);
    put_u64(out, tensors.size());
    for (const auto& t : tensors) {
        if (static_cast<std::int64_t>(t.data.size()) != shape_numel(t.shape))
            throw ContainerError("container: tensor '" + t.name + "' data length does not match shape");
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto e : t.shape) put_u64(out, static_cast<std::uint64_t>(e));
        for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

std::vector<NamedTensor> decode_container(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    r.need(8);
    if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw ContainerError("container: bad magic");
    r.pos = 8;
    const std::uint32_t version = r.u32();
    if (version != kContainerVersion)
        throw ContainerError("container: unsupported format version " + std::to_string(version));
    const std::uint64_t count = r.u64();
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        NamedTensor t;
        const std::uint32_t name_len = r.u32();
        r.need(name_len);
        t.name.assign(bytes.begin() + r.pos, bytes.begin() + r.pos + name_len);
        r.pos += name_len;
        const std::uint32_t rank = r.u32();
        std::uint64_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint64_t e = r.u64();
            if (e == 0) throw ContainerError("container: zero extent");
            t.shape.push_back(static_cast<std::int64_t>(e));
            numel *= e;
        }
        t.data.resize(numel);
        for (std::uint64_t j = 0; j < numel; ++j) t.data[j] = std::bit_cast<float>(r.u32());
        tensors.push_back(std::move(t));
    }
    if (r.pos != bytes.size()) throw ContainerError("container: trailing bytes");
    return tensors;
}

void save_container(const std::string& path, const std::vector<NamedTensor>& tensors) {
    const auto bytes = encode_container(tensors);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ContainerError("container: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ContainerError("container: write failed for '" + path + "'");
}

std::vector<NamedTensor> load_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContainerError("container: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw ContainerError("container: read failed for '" + path + "'");
    return decode_container(bytes);
}

}  // namespace goalcap
