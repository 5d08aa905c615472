#include "tale/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tale/errors.hpp"

namespace tale {

// ---- sha-256 ---------------------------------------------------------------

namespace {

constexpr std::array<std::uint32_t, 64> k256 = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
    0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
    0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
    0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
    0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
    0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
    0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
    0xc67178f2};

inline std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

void sha256_block(std::array<std::uint32_t, 8>& h, const std::uint8_t* p) {
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i) {
        w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
               (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    }
    for (int i = 16; i < 64; ++i) {
        const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
        const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
        w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    auto [a, b, c, d, e, f, g, hh] = h;
    for (int i = 0; i < 64; ++i) {
        const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
        const std::uint32_t ch = (e & f) ^ (~e & g);
        const std::uint32_t t1 = hh + s1 + ch + k256[static_cast<std::size_t>(i)] + w[i];
        const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
        const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
        const std::uint32_t t2 = s0 + maj;
        hh = g; g = f; f = e; e = d + t1;
        d = c; c = b; b = a; a = t1 + t2;
    }
    h[0] += a; h[1] += b; h[2] += c; h[3] += d;
    h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
}

}  // namespace

std::string sha256_hex(const void* data, std::size_t len) {
    std::array<std::uint32_t, 8> h = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                                      0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    const auto* p = static_cast<const std::uint8_t*>(data);
    std::size_t full = len / 64;
    for (std::size_t i = 0; i < full; ++i) sha256_block(h, p + i * 64);

    std::uint8_t tail[128] = {0};
    const std::size_t rem = len - full * 64;
    if (rem > 0) std::memcpy(tail, p + full * 64, rem);
    tail[rem] = 0x80;
    const std::size_t tail_blocks = (rem + 1 + 8 <= 64) ? 1 : 2;
    const std::uint64_t bits = static_cast<std::uint64_t>(len) * 8;
    for (int i = 0; i < 8; ++i)
        tail[tail_blocks * 64 - 1 - i] = static_cast<std::uint8_t>(bits >> (8 * i));
    for (std::size_t i = 0; i < tail_blocks; ++i) sha256_block(h, tail + i * 64);

    static const char* hexdigits = "0123456789abcdef";
    std::string out(64, '0');
    for (int i = 0; i < 8; ++i) {
        for (int b = 0; b < 4; ++b) {
            const std::uint8_t byte = static_cast<std::uint8_t>(h[static_cast<std::size_t>(i)] >>
                                                                (24 - 8 * b));
            out[static_cast<std::size_t>(i * 8 + b * 2)] = hexdigits[byte >> 4];
            out[static_cast<std::size_t>(i * 8 + b * 2 + 1)] = hexdigits[byte & 0xf];
        }
    }
    return out;
}

std::string sha256_hex(const std::string& bytes) { return sha256_hex(bytes.data(), bytes.size()); }

// ---- byte-level encode/decode ----------------------------------------------

namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Cursor {
    const std::string& bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > bytes.size()) {
            throw format_error(std::string("truncated file while reading ") + what, pos);
        }
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t(static_cast<std::uint8_t>(bytes[pos + static_cast<std::size_t>(i)]))
                 << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= std::uint64_t(static_cast<std::uint8_t>(bytes[pos + static_cast<std::size_t>(i)]))
                 << (8 * i);
        pos += 8;
        return v;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(bytes[pos++]);
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
};

std::string config_text(const ModelConfig& c) {
    std::map<std::string, std::string> kv;
    kv["d_ff"] = std::to_string(c.d_ff);
    kv["d_model"] = std::to_string(c.d_model);
    kv["max_seq_len"] = std::to_string(c.max_seq_len);
    kv["n_heads"] = std::to_string(c.n_heads);
    kv["n_layers"] = std::to_string(c.n_layers);
    kv["seed"] = std::to_string(c.seed);
    kv["vocab_size"] = std::to_string(c.vocab_size);
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

ModelConfig config_from_text(const std::string& text, std::size_t base_offset) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find(" = ");
        if (eq == std::string::npos)
            throw format_error("bad config line '" + line + "'", base_offset);
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    auto geti = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end())
            throw format_error(std::string("config missing key '") + key + "'", base_offset);
        try {
            return std::stoi(it->second);
        } catch (const std::exception&) {
            throw format_error(std::string("config key '") + key + "' is not an integer",
                               base_offset);
        }
    };
    ModelConfig c;
    c.d_ff = geti("d_ff");
    c.d_model = geti("d_model");
    c.max_seq_len = geti("max_seq_len");
    c.n_heads = geti("n_heads");
    c.n_layers = geti("n_layers");
    c.vocab_size = geti("vocab_size");
    try {
        c.seed = std::stoull(kv["seed"]);
    } catch (const std::exception&) {
        throw format_error("config key 'seed' is not an integer", base_offset);
    }
    c.validate();
    return c;
}

struct NamedTensor {
    std::string name;
    const Tensor* tensor;
};

std::vector<NamedTensor> named_tensors(const TransformerModel& model) {
    std::vector<NamedTensor> out;
    out.push_back({"embedding", &model.embedding});
    for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        const std::string prefix = "layers." + std::to_string(i + 1) + ".";  // 1-based in files
        const LayerBlock& b = model.blocks[i];
        out.push_back({prefix + "wq", &b.wq});
        out.push_back({prefix + "wk", &b.wk});
        out.push_back({prefix + "wv", &b.wv});
        out.push_back({prefix + "wo", &b.wo});
        out.push_back({prefix + "w_up", &b.w_up});
        out.push_back({prefix + "w_down", &b.w_down});
        out.push_back({prefix + "norm_attn", &b.norm_attn});
        out.push_back({prefix + "norm_mlp", &b.norm_mlp});
    }
    out.push_back({"final_norm", &model.final_norm});
    out.push_back({"w_out", &model.w_out});
    return out;
}

}  // namespace

std::string serialize_model(const TransformerModel& model) {
    model.config.validate();
    std::string out = "TALE";
    put_u32(out, weight_format_version);
    const std::string cfg = config_text(model.config);
    put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out += cfg;

    const auto tensors = named_tensors(model);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& nt : tensors) {
        put_u32(out, static_cast<std::uint32_t>(nt.name.size()));
        out += nt.name;
        put_u32(out, static_cast<std::uint32_t>(nt.tensor->shape.size()));
        for (int d : nt.tensor->shape) put_u64(out, static_cast<std::uint64_t>(d));
        out.push_back(static_cast<char>(dtype_f64));
    }
    for (const auto& nt : tensors) {
        for (double v : *nt.tensor->data) put_f64(out, v);
    }
    return out;
}

TransformerModel deserialize_model(const std::string& bytes) {
    Cursor c{bytes};
    const std::string magic = c.str(4, "magic");
    if (magic != "TALE") throw format_error("bad magic '" + magic + "', not a weight file", 0);
    const std::uint32_t version = c.u32("version");
    if (version != weight_format_version) {
        throw format_error("unsupported weight format version " + std::to_string(version), 4);
    }
    const std::size_t cfg_off = c.pos;
    const std::uint32_t cfg_len = c.u32("config length");
    const ModelConfig config = config_from_text(c.str(cfg_len, "config block"), cfg_off);

    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::size_t count;
    };
    const std::uint32_t n_tensors = c.u32("tensor count");
    std::vector<Entry> dir;
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        Entry e;
        const std::uint32_t name_len = c.u32("tensor name length");
        e.name = c.str(name_len, "tensor name");
        const std::uint32_t rank = c.u32("tensor rank");
        if (rank == 0 || rank > 8) throw format_error("implausible rank for " + e.name, c.pos - 4);
        e.count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const std::uint64_t dim = c.u64("tensor dim");
            if (dim == 0 || dim > (1u << 24))
                throw format_error("implausible dimension for " + e.name, c.pos - 8);
            e.shape.push_back(static_cast<int>(dim));
            e.count *= dim;
        }
        const std::uint8_t dtype = c.u8("dtype tag");
        if (dtype != dtype_f64) {
            throw format_error("unsupported dtype tag " + std::to_string(int(dtype)) + " for " +
                                   e.name,
                               c.pos - 1);
        }
        dir.push_back(std::move(e));
    }

    std::map<std::string, Tensor> loaded;
    for (const auto& e : dir) {
        std::vector<double> values(e.count);
        for (auto& v : values) v = c.f64("tensor payload");
        loaded.emplace(e.name, Tensor::from(e.shape, std::move(values), true));
    }
    if (c.pos != bytes.size()) {
        throw format_error("trailing bytes after final tensor payload", c.pos);
    }

    auto take = [&](const std::string& name, const std::vector<int>& want) {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw format_error("missing tensor '" + name + "'", bytes.size());
        if (it->second.shape != want) {
            throw format_error("tensor '" + name + "' has shape " + shape_str(it->second.shape) +
                                   ", config implies " + shape_str(want),
                               bytes.size());
        }
        return it->second;
    };

    TransformerModel m;
    m.config = config;
    m.embedding = take("embedding", {config.vocab_size, config.d_model});
    for (int i = 1; i <= config.n_layers; ++i) {
        const std::string prefix = "layers." + std::to_string(i) + ".";
        LayerBlock b;
        b.wq = take(prefix + "wq", {config.d_model, config.d_model});
        b.wk = take(prefix + "wk", {config.d_model, config.d_model});
        b.wv = take(prefix + "wv", {config.d_model, config.d_model});
        b.wo = take(prefix + "wo", {config.d_model, config.d_model});
        b.w_up = take(prefix + "w_up", {config.d_model, config.d_ff});
        b.w_down = take(prefix + "w_down", {config.d_ff, config.d_model});
        b.norm_attn = take(prefix + "norm_attn", {config.d_model});
        b.norm_mlp = take(prefix + "norm_mlp", {config.d_model});
        m.blocks.push_back(std::move(b));
    }
    m.final_norm = take("final_norm", {config.d_model});
    m.w_out = take("w_out", {config.d_model, config.vocab_size});
    if (loaded.size() != 8ul * static_cast<std::size_t>(config.n_layers) + 3ul) {
        throw format_error("unexpected tensor count " + std::to_string(loaded.size()),
                           bytes.size());
    }
    return m;
}

void save_model(const TransformerModel& model, const std::string& path) {
    write_file(path, serialize_model(model));
}

TransformerModel load_model(const std::string& path) {
    return deserialize_model(read_file(path));
}

std::string model_digest(const TransformerModel& model) {
    return sha256_hex(serialize_model(model));
}

// ---- trajectory ------------------------------------------------------------

std::string trajectory_json(const PruneTrajectory& t, bool with_timestamps) {
    nlohmann::json j;
    j["header"] = {{"epsilon", t.epsilon},
                   {"mode", to_string(t.mode)},
                   {"model_hash", t.model_hash},
                   {"task_hash", t.task_hash},
                   {"tool_version", t.tool_version}};
    j["termination"] = to_string(t.termination);
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& rec : t.iterations) {
        nlohmann::json r;
        r["iteration"] = rec.iteration;
        r["mask"] = rec.mask.deleted();
        if (rec.iteration > 0) r["selected_layer"] = rec.selected_layer;
        r["accuracy"] = rec.accuracy;
        nlohmann::json cands = nlohmann::json::object();
        for (const auto& [layer, acc] : rec.candidates) cands[std::to_string(layer)] = acc;
        r["candidates"] = cands;
        r["speedup_proxy"] = rec.speedup_proxy;
        if (with_timestamps) r["timestamp"] = rec.timestamp;
        recs.push_back(std::move(r));
    }
    j["iterations"] = std::move(recs);
    return j.dump(2) + "\n";
}

PruneTrajectory trajectory_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw format_error(std::string("trajectory is not valid JSON: ") + e.what(), e.byte);
    }
    try {
        PruneTrajectory t;
        const auto& h = j.at("header");
        t.epsilon = h.at("epsilon").get<double>();
        t.mode = threshold_mode_from_string(h.at("mode").get<std::string>());
        t.model_hash = h.at("model_hash").get<std::string>();
        t.task_hash = h.at("task_hash").get<std::string>();
        t.tool_version = h.at("tool_version").get<std::string>();
        t.termination = termination_from_string(j.at("termination").get<std::string>());
        // Layer count is implied rather than stored: at any iteration >= 1
        // the previous mask plus that iteration's candidate table spans all
        // L layers. A baseline-only trajectory gets a slack bound.
        int max_layer = 1;
        bool has_candidates = false;
        for (const auto& r : j.at("iterations")) {
            for (int l : r.at("mask").get<std::vector<int>>()) max_layer = std::max(max_layer, l);
            for (const auto& [key, value] : r.at("candidates").items()) {
                (void)value;
                has_candidates = true;
                max_layer = std::max(max_layer, std::stoi(key));
            }
        }
        const int layer_bound = has_candidates ? max_layer : max_layer + 1;
        for (const auto& r : j.at("iterations")) {
            IterationRecord rec;
            rec.iteration = r.at("iteration").get<int>();
            rec.mask = LayerMask::of(r.at("mask").get<std::vector<int>>(), layer_bound);
            rec.selected_layer = r.contains("selected_layer") ? r.at("selected_layer").get<int>()
                                                              : 0;
            rec.accuracy = r.at("accuracy").get<double>();
            for (const auto& [key, value] : r.at("candidates").items()) {
                rec.candidates[std::stoi(key)] = value.get<double>();
            }
            rec.speedup_proxy = r.at("speedup_proxy").get<double>();
            if (r.contains("timestamp")) rec.timestamp = r.at("timestamp").get<std::string>();
            t.iterations.push_back(std::move(rec));
        }
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("trajectory schema violation: ") + e.what(), 0);
    }
}

void save_trajectory(const PruneTrajectory& t, const std::string& path) {
    write_file(path, trajectory_json(t, true));
}

PruneTrajectory load_trajectory(const std::string& path) {
    return trajectory_from_json(read_file(path));
}

std::string trajectory_csv(const PruneTrajectory& t) {
    std::string out = "iteration,selected_layer,accuracy,proxy_speedup\n";
    for (const auto& rec : t.iterations) {
        out += std::to_string(rec.iteration) + ",";
        out += (rec.iteration > 0 ? std::to_string(rec.selected_layer) : std::string("")) + ",";
        out += format_double(rec.accuracy) + "," + format_double(rec.speedup_proxy) + "\n";
    }
    return out;
}

// ---- file helpers ----------------------------------------------------------

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw input_error("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw input_error("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw input_error("write to '" + path + "' failed");
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace tale
