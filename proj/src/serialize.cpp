#include "fallnet/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fallnet {

namespace {

constexpr char kMagic[8] = {'F', 'N', 'E', 'T', 'W', 'T', 'S', '1'};

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_f64(std::string& buf, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(buf, bits);
}

class Reader {
public:
    Reader(const std::string& buf, std::string origin)
        : buf_(buf), origin_(std::move(origin)) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        }
        pos_ += 8;
        return v;
    }

    double f64() {
        uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }

    std::string bytes(size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    size_t pos() const { return pos_; }

private:
    void need(size_t n) {
        if (pos_ + n > buf_.size()) {
            throw std::runtime_error(origin_ + ": truncated weights file");
        }
    }

    const std::string& buf_;
    std::string origin_;
    size_t pos_ = 0;
};

} // namespace

uint64_t fnv1a64_bytes(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

const Tensor* WeightsFile::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

void write_weights_file(const std::filesystem::path& path, const WeightsFile& wf) {
    std::string buf;
    buf.append(kMagic, sizeof kMagic);
    put_u32(buf, wf.version);
    put_u32(buf, wf.kind);
    put_u64(buf, wf.seed);
    put_u32(buf, static_cast<uint32_t>(wf.meta.size()));
    buf.append(wf.meta);
    put_u64(buf, fnv1a64_bytes(wf.meta.data(), wf.meta.size()));
    put_u32(buf, static_cast<uint32_t>(wf.tensors.size()));
    for (const auto& [name, t] : wf.tensors) {
        put_u32(buf, static_cast<uint32_t>(name.size()));
        buf.append(name);
        put_u32(buf, static_cast<uint32_t>(t.rank()));
        for (size_t d : t.shape()) {
            put_u64(buf, d);
        }
        for (size_t i = 0; i < t.size(); ++i) {
            put_f64(buf, static_cast<double>(t[i]));
        }
    }
    put_u64(buf, fnv1a64_bytes(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write weights file: " + path.string());
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) {
        throw std::runtime_error("short write to weights file: " + path.string());
    }
}

WeightsFile read_weights_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open weights file: " + path.string());
    }
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::string origin = path.string();
    if (buf.size() < sizeof kMagic + 8) {
        throw std::runtime_error(origin + ": truncated weights file");
    }
    uint64_t stored_le = 0;
    for (int i = 7; i >= 0; --i) {
        stored_le = (stored_le << 8) |
                    static_cast<unsigned char>(buf[buf.size() - 8 + static_cast<size_t>(i)]);
    }
    uint64_t actual = fnv1a64_bytes(buf.data(), buf.size() - 8);
    if (stored_le != actual) {
        throw std::runtime_error(origin + ": checksum mismatch (file corrupt)");
    }
    if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) {
        throw std::runtime_error(origin + ": bad magic, not a weights file");
    }

    Reader r(buf, origin);
    r.bytes(sizeof kMagic);
    WeightsFile wf;
    wf.version = r.u32();
    if (wf.version != 1) {
        throw std::runtime_error(origin + ": unsupported weights version " +
                                 std::to_string(wf.version));
    }
    wf.kind = r.u32();
    wf.seed = r.u64();
    uint32_t meta_len = r.u32();
    wf.meta = r.bytes(meta_len);
    uint64_t meta_hash = r.u64();
    if (meta_hash != fnv1a64_bytes(wf.meta.data(), wf.meta.size())) {
        throw std::runtime_error(origin + ": metadata hash mismatch");
    }
    uint32_t count = r.u32();
    for (uint32_t k = 0; k < count; ++k) {
        uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len);
        uint32_t rank = r.u32();
        if (rank > 8) {
            throw std::runtime_error(origin + ": implausible tensor rank " +
                                     std::to_string(rank) + " for '" + name + "'");
        }
        std::vector<size_t> shape(rank);
        size_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            uint64_t dim = r.u64();
            shape[d] = static_cast<size_t>(dim);
            numel *= shape[d];
        }
        if (numel > (buf.size() / 8) + 1) {
            throw std::runtime_error(origin + ": implausible tensor size for '" + name + "'");
        }
        std::vector<real> data(numel);
        for (size_t i = 0; i < numel; ++i) {
            data[i] = static_cast<real>(r.f64());
        }
        wf.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    if (r.pos() != buf.size() - 8) {
        throw std::runtime_error(origin + ": trailing bytes after tensor table");
    }
    return wf;
}

WeightsFile snapshot_weights(Model& model, uint64_t seed, std::string meta,
                             const std::vector<std::pair<std::string, Tensor>>& extras) {
    WeightsFile wf;
    wf.kind = static_cast<uint32_t>(model.kind());
    wf.seed = seed;
    wf.meta = std::move(meta);
    for (const ParamRef& p : model.params()) {
        wf.tensors.emplace_back(p.name, *p.value);
    }
    for (const auto& [name, t] : extras) {
        wf.tensors.emplace_back(name, t);
    }
    return wf;
}

void restore_weights(Model& model, const WeightsFile& wf) {
    if (wf.kind != static_cast<uint32_t>(model.kind())) {
        throw std::runtime_error("restore_weights: file holds model kind " +
                                 std::to_string(wf.kind) + ", expected " +
                                 model_kind_name(model.kind()));
    }
    std::vector<ParamRef> params = model.params();
    std::vector<bool> used(wf.tensors.size(), false);
    for (ParamRef& p : params) {
        const Tensor* src = nullptr;
        for (size_t i = 0; i < wf.tensors.size(); ++i) {
            if (wf.tensors[i].first == p.name) {
                src = &wf.tensors[i].second;
                used[i] = true;
                break;
            }
        }
        if (!src) {
            throw std::runtime_error("restore_weights: missing tensor '" + p.name + "'");
        }
        if (src->shape() != p.value->shape()) {
            throw std::runtime_error("restore_weights: tensor '" + p.name + "' has shape " +
                                     src->shape_str() + ", expected " +
                                     p.value->shape_str());
        }
        *p.value = *src;
    }
    for (size_t i = 0; i < wf.tensors.size(); ++i) {
        if (!used[i] && wf.tensors[i].first.rfind("standardize.", 0) != 0) {
            throw std::runtime_error("restore_weights: unexpected tensor '" +
                                     wf.tensors[i].first + "'");
        }
    }
}

} // namespace fallnet
