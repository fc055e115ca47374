#include "vitssp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "vitssp/dataset.hpp"  // crc32
#include "vitssp/tensor.hpp"

namespace vitssp {

namespace {

constexpr char kMagic[4] = {'V', 'S', 'P', 'C'};
constexpr uint16_t kVersion = 1;

void put_bytes(std::string& out, const void* p, size_t n) {
    out.append(static_cast<const char*>(p), n);
}

template <class T>
void put(std::string& out, T v) {
    put_bytes(out, &v, sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
    if (s.size() > std::numeric_limits<uint32_t>::max())
        throw ContractError("checkpoint: string too long");
    put<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.append(s);
}

class Reader {
public:
    Reader(const uint8_t* data, size_t len) : data_(data), len_(len) {}

    template <class T>
    T get() {
        T v;
        copy(&v, sizeof(T));
        return v;
    }

    std::string get_str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

    void copy(void* dst, size_t n) {
        need(n);
        std::memcpy(dst, data_ + pos_, n);
        pos_ += n;
    }

    size_t pos() const { return pos_; }

private:
    void need(size_t n) const {
        if (pos_ + n > len_) throw DataError("checkpoint: truncated file");
    }
    const uint8_t* data_;
    size_t len_;
    size_t pos_ = 0;
};

size_t dtype_width(DType dt) { return dt == DType::F32 ? 4 : 8; }

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::string out;
    put_bytes(out, kMagic, 4);
    put<uint16_t>(out, kVersion);
    put<uint8_t>(out, static_cast<uint8_t>(ck.stage));
    put<uint8_t>(out, ck.dt == DType::F32 ? 0 : 1);
    put<uint64_t>(out, ck.rng_key);
    put<uint64_t>(out, ck.rng_counter);
    put_str(out, ck.config_echo);
    put_str(out, ck.meta);
    put<uint32_t>(out, static_cast<uint32_t>(ck.tensors.items.size()));
    for (const auto& [name, t] : ck.tensors.items) {
        if (name.size() > std::numeric_limits<uint16_t>::max())
            throw ContractError("checkpoint: tensor name too long");
        if (t.dtype() != ck.dt)
            throw ContractError("checkpoint: tensor '" + name +
                                "' dtype differs from header dtype");
        put<uint16_t>(out, static_cast<uint16_t>(name.size()));
        out.append(name);
        put<uint8_t>(out, static_cast<uint8_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) {
            const int64_t d = t.dim(i);
            if (d < 0 || d > std::numeric_limits<uint32_t>::max())
                throw ContractError("checkpoint: dimension out of range");
            put<uint32_t>(out, static_cast<uint32_t>(d));
        }
        if (ck.dt == DType::F32)
            put_bytes(out, t.raw<float>().data(), t.raw<float>().size() * 4);
        else
            put_bytes(out, t.raw<double>().data(), t.raw<double>().size() * 8);
    }
    const uint32_t crc =
        crc32(reinterpret_cast<const uint8_t*>(out.data()), out.size());
    put<uint32_t>(out, crc);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot open '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());
    if (bytes.size() < 4 + 2 + 1 + 1 + 8 + 8 + 4 + 4 + 4 + 4)
        throw DataError("checkpoint: file too small");
    const auto* p = reinterpret_cast<const uint8_t*>(bytes.data());
    if (std::memcmp(p, kMagic, 4) != 0)
        throw DataError("checkpoint: bad magic, not a checkpoint file");
    uint32_t stored;
    std::memcpy(&stored, p + bytes.size() - 4, 4);
    const uint32_t actual = crc32(p, bytes.size() - 4);
    if (stored != actual) throw DataError("checkpoint: crc mismatch");

    Reader r(p, bytes.size() - 4);
    r.get_str(4);  // magic, already checked
    const uint16_t version = r.get<uint16_t>();
    if (version != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    const uint8_t stage = r.get<uint8_t>();
    if (stage > 1) throw DataError("checkpoint: unknown stage tag");
    ck.stage = static_cast<CheckpointStage>(stage);
    const uint8_t dt = r.get<uint8_t>();
    if (dt > 1) throw DataError("checkpoint: unknown dtype tag");
    ck.dt = dt == 0 ? DType::F32 : DType::F64;
    ck.rng_key = r.get<uint64_t>();
    ck.rng_counter = r.get<uint64_t>();
    ck.config_echo = r.get_str(r.get<uint32_t>());
    ck.meta = r.get_str(r.get<uint32_t>());
    const uint32_t count = r.get<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = r.get_str(r.get<uint16_t>());
        const uint8_t ndim = r.get<uint8_t>();
        Shape shape(ndim);
        for (uint8_t d = 0; d < ndim; ++d)
            shape[d] = static_cast<int64_t>(r.get<uint32_t>());
        NoGradGuard guard;
        Tensor t = Tensor::zeros(shape, ck.dt);
        if (ck.dt == DType::F32)
            r.copy(t.raw<float>().data(), t.raw<float>().size() * 4);
        else
            r.copy(t.raw<double>().data(), t.raw<double>().size() * 8);
        ck.tensors.items.emplace_back(name, std::move(t));
    }
    if (r.pos() != bytes.size() - 4)
        throw DataError("checkpoint: trailing bytes before footer");
    return ck;
}

void load_into(NamedTensors& dst, const Checkpoint& ck) {
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : ck.tensors.items) by_name.emplace(name, &t);
    if (by_name.size() != ck.tensors.items.size())
        throw DataError("checkpoint: duplicate tensor name");
    for (auto& [name, t] : dst.items) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw DataError("checkpoint: missing tensor '" + name + "'");
        const Tensor& src = *it->second;
        if (src.shape() != t.shape())
            throw DataError("checkpoint: shape mismatch for '" + name + "'");
        if (src.dtype() != t.dtype())
            throw DataError("checkpoint: dtype mismatch for '" + name + "'");
        copy_(t, src);
        by_name.erase(it);
    }
    if (!by_name.empty())
        throw DataError("checkpoint: unexpected extra tensor '" +
                        std::string(by_name.begin()->first) + "'");
}

}  // namespace vitssp
