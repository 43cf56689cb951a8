#include "slidealign/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace sa {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'C', 'P'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const nlohmann::json& meta, const ParamStore& store) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), ErrKind::io, "cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    const std::string mj = meta.dump();
    write_u64(os, mj.size());
    os.write(mj.data(), static_cast<std::streamsize>(mj.size()));
    write_u64(os, store.size());
    for (size_t i = 0; i < store.size(); ++i) {
        const Parameter* p = store.at(i);
        write_u32(os, static_cast<uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_u32(os, static_cast<uint32_t>(p->value.ndim()));
        for (int d = 0; d < p->value.ndim(); ++d) write_u64(os, static_cast<uint64_t>(p->value.dim(d)));
        os.write(reinterpret_cast<const char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.numel() * 8));
    }
    require(os.good(), ErrKind::io, "checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), ErrKind::io, "cannot open checkpoint: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    require(is.good() && std::memcmp(magic, kMagic, 4) == 0, ErrKind::io,
            "not a checkpoint file: " + path);
    const uint32_t version = read_u32(is);
    require(version == kVersion, ErrKind::io,
            "unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    const uint64_t mlen = read_u64(is);
    std::string mj(mlen, '\0');
    is.read(mj.data(), static_cast<std::streamsize>(mlen));
    ck.meta = nlohmann::json::parse(mj);
    const uint64_t count = read_u64(is);
    ck.tensors.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        const uint32_t nlen = read_u32(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const uint32_t ndim = read_u32(is);
        std::vector<int> shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(read_u64(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 8));
        require(is.good(), ErrKind::io, "truncated checkpoint: " + path);
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

int apply_checkpoint(const Checkpoint& ck, ParamStore& store, std::string_view prefix) {
    int applied = 0;
    for (const auto& [name, tensor] : ck.tensors) {
        if (name.rfind(prefix, 0) != 0) continue;
        Parameter* p = store.find(name);
        require(p != nullptr, ErrKind::io, "checkpoint tensor has no matching parameter: " + name);
        require(p->value.same_shape(tensor), ErrKind::io,
                "checkpoint shape mismatch for " + name + ": " + tensor.shape_str() + " vs " +
                    p->value.shape_str());
        p->value = tensor;
        ++applied;
    }
    require(applied > 0, ErrKind::io,
            "checkpoint contains no tensors with prefix '" + std::string(prefix) + "'");
    return applied;
}

void restore_checkpoint(const Checkpoint& ck, ParamStore& store) {
    const int applied = apply_checkpoint(ck, store, "");
    require(static_cast<size_t>(applied) == store.size(), ErrKind::io,
            "checkpoint does not cover every model parameter");
}

}  // namespace sa
