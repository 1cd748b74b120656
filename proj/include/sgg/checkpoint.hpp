#ifndef SGG_CHECKPOINT_HPP
#define SGG_CHECKPOINT_HPP

#include "sgg/error.hpp"
#include "sgg/graph.hpp"
#include "sgg/model.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

/**
 *  \file
 *  Binary checkpoints.
 *
 *  All integers and reals are little-endian.
 *
 *      magic        8 bytes  "SGGCKPT\n"
 *      version      u32      1
 *      seed         u64
 *      D H |C| |R|  u64 x 4
 *      iterations   u64
 *      pooling      u32      0 weighted, 1 avg, 2 max
 *      class names  u32 count, then (u32 length, bytes) each
 *      pred. names  same
 *      params       u32 count, then per parameter:
 *                   u32 name length, name bytes, u32 rank, u64 dims[rank],
 *                   f64 values[prod(dims)]
 */

namespace sgg
{

struct checkpoint
{
    std::uint64_t seed = 0;
    std::size_t iterations = 2;
    pooling_mode pooling = pooling_mode::weighted;
    vocab_meta vocab;
    model_params params;
};

namespace detail
{

constexpr char checkpoint_magic[8] = {'S', 'G', 'G', 'C', 'K', 'P', 'T', '\n'};
constexpr std::uint32_t checkpoint_version = 1;

class byte_writer
{
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void raw(const void* p, std::size_t n)
    {
        const auto* c = static_cast<const char*>(p);
        bytes_.insert(bytes_.end(), c, c + n);
    }
    void str(const std::string& s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    const std::string& bytes() const { return bytes_; }

private:
    void put(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string bytes_;
};

class byte_reader
{
public:
    explicit byte_reader(std::string data) : data_(std::move(data)) {}

    std::uint64_t get(int n)
    {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::string raw(std::size_t n)
    {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str() { return raw(u32()); }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n)
    {
        if (data_.size() - pos_ < n) throw parse_error("checkpoint truncated at byte " + std::to_string(pos_), 0);
    }
    std::string data_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::string serialize_checkpoint(const checkpoint& c)
{
    detail::byte_writer w;
    w.raw(detail::checkpoint_magic, sizeof detail::checkpoint_magic);
    w.u32(detail::checkpoint_version);
    w.u64(c.seed);
    const auto& d = c.params.dims;
    w.u64(d.feature_dim);
    w.u64(d.hidden);
    w.u64(d.num_classes);
    w.u64(d.num_predicates);
    w.u64(c.iterations);
    w.u32(static_cast<std::uint32_t>(c.pooling));
    for (const auto* names : {&c.vocab.class_names, &c.vocab.predicate_names}) {
        w.u32(static_cast<std::uint32_t>(names->size()));
        for (const auto& n : *names) w.str(n);
    }
    const auto slots = c.params.slots();
    w.u32(static_cast<std::uint32_t>(slots.size()));
    for (const auto& [name, t] : slots) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t->rank()));
        for (auto dim : t->shape()) w.u64(dim);
        for (double v : t->values()) w.f64(v);
    }
    return w.bytes();
}

inline checkpoint deserialize_checkpoint(std::string bytes)
{
    detail::byte_reader r(std::move(bytes));
    if (r.raw(8) != std::string(detail::checkpoint_magic, 8)) throw parse_error("not a checkpoint file", 0);
    if (r.u32() != detail::checkpoint_version) throw parse_error("unsupported checkpoint version", 0);
    checkpoint c;
    c.seed = r.u64();
    model_dims d;
    d.feature_dim = r.u64();
    d.hidden = r.u64();
    d.num_classes = r.u64();
    d.num_predicates = r.u64();
    c.iterations = r.u64();
    const auto mode = r.u32();
    if (mode > 2) throw parse_error("unknown pooling mode in checkpoint", 0);
    c.pooling = static_cast<pooling_mode>(mode);
    for (auto* names : {&c.vocab.class_names, &c.vocab.predicate_names}) {
        const auto n = r.u32();
        for (std::uint32_t k = 0; k < n; ++k) names->push_back(r.str());
    }

    c.params = zero_params(d);
    auto slots = c.params.slots();
    if (r.u32() != slots.size()) throw parse_error("checkpoint parameter count mismatch", 0);
    for (auto& [name, t] : slots) {
        const std::string stored = r.str();
        if (stored != name) throw parse_error("checkpoint parameter " + stored + ", expected " + name, 0);
        shape_t shape(r.u32());
        for (auto& dim : shape) dim = r.u64();
        if (shape != t->shape()) {
            throw parse_error("checkpoint parameter " + name + " has shape " + shape_str(shape) + ", expected " +
                              shape_str(t->shape()), 0);
        }
        std::vector<double> values(shape_size(shape));
        for (double& v : values) v = r.f64();
        *t = tensor(shape, std::move(values), true);
    }
    if (!r.done()) throw parse_error("trailing bytes after checkpoint", 0);
    return c;
}

inline void save_checkpoint(const checkpoint& c, const std::string& path)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open " + path + " for writing");
    const std::string bytes = serialize_checkpoint(c);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw io_error("write failed: " + path);
}

inline checkpoint load_checkpoint(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(std::move(bytes));
}

} // namespace sgg
#endif // header guard
