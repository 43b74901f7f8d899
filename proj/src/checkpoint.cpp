#include "vitp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace vitp {

namespace {

constexpr char kMagic[8] = {'V', 'I', 'T', 'P', 'C', 'K', 'P', 'T'};
constexpr char kEnd[8] = {'V', 'I', 'T', 'P', 'E', 'N', 'D', '\0'};

struct Writer {
    std::ofstream out;

    explicit Writer(const std::string& path) : out(path, std::ios::binary) {
        if (!out) fail(Error::Kind::missing, "cannot open checkpoint for writing: " + path);
    }
    void bytes(const void* p, size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u32(uint32_t v) { bytes(&v, sizeof v); }
    void u64(uint64_t v) { bytes(&v, sizeof v); }
    void text(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void tensor(const std::string& name, const std::vector<int64_t>& shape,
                const float* data, size_t count) {
        text(name);
        u32(static_cast<uint32_t>(shape.size()));
        for (int64_t d : shape) u64(static_cast<uint64_t>(d));
        bytes(data, count * sizeof(float));
    }
};

struct Reader {
    std::vector<char> buf;
    size_t pos = 0;
    std::string path;

    explicit Reader(const std::string& p) : path(p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) fail(Error::Kind::missing, "checkpoint not found: " + p);
        buf.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }
    void bytes(void* dst, size_t n) {
        if (pos + n > buf.size())
            fail(Error::Kind::truncation, path + ": truncated at byte " + std::to_string(pos) +
                                              " (need " + std::to_string(n) + " more)");
        std::memcpy(dst, buf.data() + pos, n);
        pos += n;
    }
    uint32_t u32() {
        uint32_t v;
        bytes(&v, sizeof v);
        return v;
    }
    uint64_t u64() {
        uint64_t v;
        bytes(&v, sizeof v);
        return v;
    }
    std::string text() {
        uint32_t n = u32();
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
};

std::string shape_str(const std::vector<int64_t>& shape) {
    return TensorT<float>::shape_str(shape);
}

} // namespace

const CheckpointTensor* CheckpointData::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void save_checkpoint(const std::string& path, const std::string& config_text, uint64_t seed,
                     uint64_t step, const std::vector<ParamT<float>>& params, const AdamW* opt) {
    Writer w(path);
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    w.text(config_text);
    w.text(kPrngId);
    w.u64(seed);
    w.u64(step);
    w.u64(opt ? static_cast<uint64_t>(opt->steps_taken()) : 0);
    uint32_t count = static_cast<uint32_t>(params.size());
    if (opt) count += static_cast<uint32_t>(2 * opt->slots().size());
    w.u32(count);
    for (const auto& p : params)
        w.tensor(p.name, p.tensor.shape(), p.tensor.value().data(), p.tensor.value().size());
    if (opt)
        for (const auto& slot : opt->slots()) {
            auto n = static_cast<int64_t>(slot.m.size());
            w.tensor("adam.m." + slot.name, {n}, slot.m.data(), slot.m.size());
            w.tensor("adam.v." + slot.name, {n}, slot.v.data(), slot.v.size());
        }
    w.bytes(kEnd, sizeof kEnd);
    if (!w.out) fail(Error::Kind::missing, "write failed for checkpoint: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        fail(Error::Kind::format, path + ": bad magic, not a checkpoint file");
    CheckpointData out;
    out.version = r.u32();
    if (out.version != kCheckpointVersion)
        fail(Error::Kind::version, path + ": format version " + std::to_string(out.version) +
                                       ", expected " + std::to_string(kCheckpointVersion));
    out.config_text = r.text();
    out.prng_id = r.text();
    out.seed = r.u64();
    out.step = r.u64();
    out.adam_steps = r.u64();
    uint32_t count = r.u32();
    out.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.text();
        CheckpointTensor t;
        uint32_t ndim = r.u32();
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            t.shape.push_back(static_cast<int64_t>(r.u64()));
            numel *= t.shape.back();
        }
        if (numel < 0 || numel > (1ll << 32))
            fail(Error::Kind::format, path + ": tensor " + name + " has implausible shape " +
                                          shape_str(t.shape));
        t.data.resize(static_cast<size_t>(numel));
        r.bytes(t.data.data(), t.data.size() * sizeof(float));
        out.tensors.emplace_back(std::move(name), std::move(t));
    }
    char end[8];
    r.bytes(end, sizeof end);
    if (std::memcmp(end, kEnd, sizeof kEnd) != 0)
        fail(Error::Kind::format, path + ": end marker missing, container corrupt");
    if (r.pos != r.buf.size())
        fail(Error::Kind::format, path + ": " + std::to_string(r.buf.size() - r.pos) +
                                      " trailing bytes after end marker");
    return out;
}

void restore_model(const CheckpointData& ckpt, std::vector<ParamT<float>>& params) {
    for (auto& p : params) {
        const CheckpointTensor* t = ckpt.find(p.name);
        if (!t)
            fail(Error::Kind::shape, "checkpoint is missing tensor " + p.name);
        if (t->shape != p.tensor.shape())
            fail(Error::Kind::shape, "checkpoint tensor " + p.name + " has shape " +
                                         shape_str(t->shape) + ", model expects " +
                                         shape_str(p.tensor.shape()));
        p.tensor.value() = t->data;
    }
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.rfind("adam.", 0) == 0) continue;
        bool known = false;
        for (const auto& p : params)
            if (p.name == name) {
                known = true;
                break;
            }
        if (!known)
            fail(Error::Kind::shape, "checkpoint tensor " + name + " has no matching parameter");
    }
}

void restore_optimizer(const CheckpointData& ckpt, AdamW& opt) {
    for (auto& slot : opt.slots()) {
        for (auto [prefix, vec] : {std::pair{"adam.m.", &slot.m}, std::pair{"adam.v.", &slot.v}}) {
            std::string name = prefix + slot.name;
            const CheckpointTensor* t = ckpt.find(name);
            if (!t) fail(Error::Kind::shape, "checkpoint is missing tensor " + name);
            if (t->data.size() != vec->size())
                fail(Error::Kind::shape, "checkpoint tensor " + name + " has " +
                                             std::to_string(t->data.size()) + " values, expected " +
                                             std::to_string(vec->size()));
            *vec = t->data;
        }
    }
    opt.set_steps_taken(static_cast<int64_t>(ckpt.adam_steps));
}

} // namespace vitp
