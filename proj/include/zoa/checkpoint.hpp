#pragma once

// Versioned little-endian binary container for frozen models, source feature
// statistics and knowledge-base state. Layout, byte for byte:
//
//   "ZOAF"            4-byte magic
//   u32 version       (currently 1)
//   sections until EOF, each:
//     4-byte tag      "MODL" | "STAT" | "KNOW"
//     u64 size        payload byte count
//     payload
//
// MODL: u8 arch; arch dims (u64 fields; MLP adds u8 head_norm);
//       f64 bn_eps; f64 clean_test_accuracy; u8 frozen;
//       dense layers  [name, weight tensor, bias array, 2 optional specs]
//       conv layers   [name, u64 in_ch, u64 out_ch, weight tensor, spec]
//       norm layers   [name, u64 channels, gamma0, beta0, run_mean, run_var,
//                      u8 adaptable]
//       Strings are u64 length + bytes; tensors are u64 rank + u64 dims +
//       f64 payload; arrays are u64 length + f64 payload; optional QuantSpec
//       is u8 present + (i32 bits, f64 range).
// STAT: u64 blocks; per block u64 channels, f64 means, f64 stds.
// KNOW: u64 capacity, f64 temperature, f64 w_max, u64 next_creation,
//       u64 count, f64 logits[count], then per vector u64 creation_index and
//       the flat f64 payload (length u64).

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "zoa/knowledge.hpp"
#include "zoa/model.hpp"

namespace zoa {

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void i32(std::int32_t v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u64(s.size());
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void f64_array(const std::vector<double>& v) {
        u64(v.size());
        for (double x : v) f64(x);
    }
    void tensor(const Tensor& t) {
        u64(t.rank());
        for (std::size_t d : t.shape) u64(d);
        for (double x : t.data) f64(x);
    }
    void spec(const std::optional<QuantSpec>& s) {
        u8(s.has_value() ? 1 : 0);
        if (s) {
            i32(s->bits);
            f64(s->range);
        }
    }
    const std::vector<char>& bytes() const { return buf_; }

private:
    void raw(const void* p, std::size_t n) {
        const char* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    std::vector<char> buf_;
};

class ByteReader {
public:
    ByteReader(const char* data, std::size_t size) : data_(data), size_(size) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() { return read_as<std::uint32_t>(); }
    std::uint64_t u64() { return read_as<std::uint64_t>(); }
    std::int32_t i32() { return read_as<std::int32_t>(); }
    double f64() { return read_as<double>(); }
    std::string str() {
        const std::uint64_t n = u64();
        const char* p = take(n);
        return std::string(p, p + n);
    }
    std::vector<double> f64_array() {
        const std::uint64_t n = u64();
        std::vector<double> v(n);
        for (auto& x : v) x = f64();
        return v;
    }
    Tensor tensor() {
        const std::uint64_t rank = u64();
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = u64();
        std::vector<double> data(Tensor::numel_of(shape));
        for (auto& x : data) x = f64();
        return Tensor(std::move(shape), std::move(data));
    }
    std::optional<QuantSpec> spec() {
        if (u8() == 0) return std::nullopt;
        QuantSpec s;
        s.bits = i32();
        s.range = f64();
        return s;
    }
    bool done() const { return pos_ == size_; }

private:
    template <typename T> T read_as() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    const char* take(std::size_t n) {
        if (pos_ + n > size_) throw std::runtime_error("checkpoint: truncated section");
        const char* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    const char* data_;
    std::size_t size_, pos_ = 0;
};

inline void write_model(ByteWriter& w, const QuantizedModel& m) {
    w.u8(m.arch == Arch::Mlp ? 0 : 1);
    if (m.arch == Arch::Mlp) {
        w.u64(m.mlp.input_dim);
        w.u64(m.mlp.hidden);
        w.u64(m.mlp.num_blocks);
        w.u64(m.mlp.classes);
        w.u8(m.mlp.head_norm ? 1 : 0);
    } else {
        w.u64(m.cnn.in_ch);
        w.u64(m.cnn.image);
        w.u64(m.cnn.c1);
        w.u64(m.cnn.c2);
        w.u64(m.cnn.c3);
        w.u64(m.cnn.classes);
    }
    w.f64(m.bn_eps);
    w.f64(m.clean_test_accuracy);
    w.u8(m.frozen ? 1 : 0);
    w.u64(m.dense.size());
    for (const auto& d : m.dense) {
        w.str(d.name);
        w.tensor(d.weight);
        w.f64_array(d.bias);
        w.spec(d.weight_spec);
        w.spec(d.bias_spec);
    }
    w.u64(m.conv.size());
    for (const auto& c : m.conv) {
        w.str(c.name);
        w.u64(c.in_ch);
        w.u64(c.out_ch);
        w.tensor(c.weight);
        w.spec(c.weight_spec);
    }
    w.u64(m.norm.size());
    for (const auto& n : m.norm) {
        w.str(n.name);
        w.u64(n.channels);
        w.f64_array(n.gamma0);
        w.f64_array(n.beta0);
        w.f64_array(n.run_mean);
        w.f64_array(n.run_var);
        w.u8(n.adaptable ? 1 : 0);
    }
}

inline QuantizedModel read_model(ByteReader& r) {
    QuantizedModel m;
    m.arch = r.u8() == 0 ? Arch::Mlp : Arch::Cnn;
    if (m.arch == Arch::Mlp) {
        m.mlp.input_dim = r.u64();
        m.mlp.hidden = r.u64();
        m.mlp.num_blocks = r.u64();
        m.mlp.classes = r.u64();
        m.mlp.head_norm = r.u8() != 0;
    } else {
        m.cnn.in_ch = r.u64();
        m.cnn.image = r.u64();
        m.cnn.c1 = r.u64();
        m.cnn.c2 = r.u64();
        m.cnn.c3 = r.u64();
        m.cnn.classes = r.u64();
    }
    m.bn_eps = r.f64();
    m.clean_test_accuracy = r.f64();
    m.frozen = r.u8() != 0;
    const std::uint64_t nd = r.u64();
    for (std::uint64_t i = 0; i < nd; ++i) {
        DenseLayer d;
        d.name = r.str();
        d.weight = r.tensor();
        d.bias = r.f64_array();
        d.weight_spec = r.spec();
        d.bias_spec = r.spec();
        m.dense.push_back(std::move(d));
    }
    const std::uint64_t nc = r.u64();
    for (std::uint64_t i = 0; i < nc; ++i) {
        ConvLayer c;
        c.name = r.str();
        c.in_ch = r.u64();
        c.out_ch = r.u64();
        c.weight = r.tensor();
        c.weight_spec = r.spec();
        m.conv.push_back(std::move(c));
    }
    const std::uint64_t nn = r.u64();
    for (std::uint64_t i = 0; i < nn; ++i) {
        NormLayer n;
        n.name = r.str();
        n.channels = r.u64();
        n.gamma0 = r.f64_array();
        n.beta0 = r.f64_array();
        n.run_mean = r.f64_array();
        n.run_var = r.f64_array();
        n.adaptable = r.u8() != 0;
        m.norm.push_back(std::move(n));
    }
    m.rebuild_schema();
    return m;
}

inline void write_stats(ByteWriter& w, const FeatureStats& s) {
    w.u64(s.blocks());
    for (std::size_t i = 0; i < s.blocks(); ++i) {
        w.u64(s.mean[i].size());
        for (double v : s.mean[i]) w.f64(v);
        for (double v : s.stddev[i]) w.f64(v);
    }
}

inline FeatureStats read_stats(ByteReader& r) {
    FeatureStats s;
    const std::uint64_t blocks = r.u64();
    for (std::uint64_t i = 0; i < blocks; ++i) {
        const std::uint64_t ch = r.u64();
        std::vector<double> mean(ch), sd(ch);
        for (auto& v : mean) v = r.f64();
        for (auto& v : sd) v = r.f64();
        s.mean.push_back(std::move(mean));
        s.stddev.push_back(std::move(sd));
    }
    return s;
}

inline void write_knowledge(ByteWriter& w, const KnowledgeBase& kb) {
    w.u64(kb.capacity());
    w.f64(kb.temperature());
    w.f64(kb.w_max());
    w.u64(kb.next_creation_index());
    w.u64(kb.size());
    for (double l : kb.logits()) w.f64(l);
    for (const auto& dv : kb.vectors()) {
        w.u64(dv.creation_index);
        w.u64(dv.delta.size());
        for (double v : dv.delta.flat()) w.f64(v);
    }
}

inline KnowledgeBase read_knowledge(ByteReader& r, const SchemaPtr& schema) {
    const std::uint64_t capacity = r.u64();
    const double temperature = r.f64();
    const double w_max = r.f64();
    const std::uint64_t next_creation = r.u64();
    const std::uint64_t count = r.u64();
    KnowledgeBase kb(schema, capacity, temperature, w_max);
    std::vector<double> logits(count);
    for (auto& l : logits) l = r.f64();
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t creation = r.u64();
        const std::uint64_t len = r.u64();
        LayeredVector delta(schema);
        if (len != delta.size()) throw std::runtime_error("checkpoint: knowledge size mismatch");
        for (auto& v : delta.flat()) v = r.f64();
        kb.restore_vector(std::move(delta), logits[i], creation);
    }
    kb.set_next_creation_index(next_creation);
    return kb;
}

} // namespace detail

struct Checkpoint {
    QuantizedModel model;
    std::optional<FeatureStats> source_stats;
    std::optional<KnowledgeBase> knowledge;
};

inline void save_checkpoint(const std::string& path, const QuantizedModel& model,
                            const FeatureStats* stats = nullptr,
                            const KnowledgeBase* kb = nullptr) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write("ZOAF", 4);
    const std::uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), 4);

    auto section = [&](const char* tag, const detail::ByteWriter& w) {
        out.write(tag, 4);
        const std::uint64_t size = w.bytes().size();
        out.write(reinterpret_cast<const char*>(&size), 8);
        out.write(w.bytes().data(), static_cast<std::streamsize>(size));
    };

    detail::ByteWriter wm;
    detail::write_model(wm, model);
    section("MODL", wm);
    if (stats) {
        detail::ByteWriter ws;
        detail::write_stats(ws, *stats);
        section("STAT", ws);
    }
    if (kb) {
        detail::ByteWriter wk;
        detail::write_knowledge(wk, *kb);
        section("KNOW", wk);
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "ZOAF")
        throw std::runtime_error("load_checkpoint: bad magic");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    if (version != 1) throw std::runtime_error("load_checkpoint: unsupported version");

    Checkpoint ck;
    bool have_model = false;
    std::vector<char> know_payload;
    while (true) {
        char tag[4];
        in.read(tag, 4);
        if (!in) break;
        std::uint64_t size = 0;
        in.read(reinterpret_cast<char*>(&size), 8);
        std::vector<char> payload(size);
        in.read(payload.data(), static_cast<std::streamsize>(size));
        if (!in) throw std::runtime_error("load_checkpoint: truncated file");
        const std::string t(tag, 4);
        if (t == "MODL") {
            detail::ByteReader r(payload.data(), payload.size());
            ck.model = detail::read_model(r);
            have_model = true;
        } else if (t == "STAT") {
            detail::ByteReader r(payload.data(), payload.size());
            ck.source_stats = detail::read_stats(r);
        } else if (t == "KNOW") {
            know_payload = std::move(payload); // needs the model schema
        } else {
            throw std::runtime_error("load_checkpoint: unknown section '" + t + "'");
        }
    }
    if (!have_model) throw std::runtime_error("load_checkpoint: missing MODL section");
    if (!know_payload.empty()) {
        detail::ByteReader r(know_payload.data(), know_payload.size());
        ck.knowledge = detail::read_knowledge(r, ck.model.schema);
    }
    return ck;
}

} // namespace zoa
