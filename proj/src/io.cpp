#include "negmine/io.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <sstream>

namespace negmine::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header,
                     uint64_t config_hash)
    : out_(path), n_cols_(header.size()) {
    if (!out_) throw IoError("cannot open for writing: " + path);
    char hh[32];
    std::snprintf(hh, sizeof(hh), "%016llx", static_cast<unsigned long long>(config_hash));
    out_ << "# config_hash=" << hh << "\n";
    for (size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << "\n";
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != n_cols_) throw ContractError("csv row width mismatch");
    for (size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
    if (!out_) throw IoError("csv write failure");
}

size_t CsvData::col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw DataError("csv column '" + name + "' not found");
}

CsvData read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open csv: " + path);
    CsvData d;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        if (!have_header) {
            d.header = std::move(cells);
            have_header = true;
        } else {
            d.rows.push_back(std::move(cells));
        }
    }
    if (!have_header) throw DataError("csv has no header row: " + path);
    return d;
}

JsonlWriter::JsonlWriter(const std::string& path) : out_(path) {
    if (!out_) throw IoError("cannot open for writing: " + path);
}

void JsonlWriter::record(const json& j) {
    out_ << j.dump() << "\n";
    if (!out_) throw IoError("jsonl write failure");
}

std::vector<json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open jsonl: " + path);
    std::vector<json> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
    }
    return out;
}

void write_manifest(const std::string& run_dir, const json& manifest) {
    fs::create_directories(run_dir);
    const std::string tmp = (fs::path(run_dir) / "manifest.json.tmp").string();
    const std::string dst = (fs::path(run_dir) / "manifest.json").string();
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot open for writing: " + tmp);
        out << manifest.dump(2) << "\n";
        if (!out) throw IoError("write failure on " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, dst, ec);
    if (ec) throw IoError("manifest rename failed: " + ec.message());
}

json read_manifest(const std::string& run_dir) {
    const std::string path = (fs::path(run_dir) / "manifest.json").string();
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw DataError(path + ": bad JSON: " + e.what());
    }
}

std::string iso8601_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

// --- binary stream helpers -------------------------------------------------

namespace {

constexpr uint32_t kCkptMagic = 0x4B434D4Eu;   // "NMCK"
constexpr uint32_t kAuditMagic = 0x44414D4Eu;  // "NMAD"
constexpr uint32_t kEndMagic = 0x444E454Eu;    // "NEND"

class BinWriter {
public:
    explicit BinWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw IoError("cannot open for writing: " + path);
    }
    void u32(uint32_t x) { raw(&x, sizeof(x)); }
    void u64(uint64_t x) { raw(&x, sizeof(x)); }
    void i64(int64_t x) { raw(&x, sizeof(x)); }
    void f64(double x) { raw(&x, sizeof(x)); }
    void u8(uint8_t x) { raw(&x, sizeof(x)); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void bytes(const std::vector<uint8_t>& b) {
        u64(b.size());
        raw(b.data(), b.size());
    }
    void mat(const Mat& m) {
        u64(m.rows);
        u64(m.cols);
        raw(m.a.data(), m.a.size() * sizeof(double));
    }
    void check() {
        if (!out_) throw IoError("write failure on " + path_);
    }

private:
    void raw(const void* p, size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    std::ofstream out_;
    std::string path_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw IoError("cannot open: " + path);
    }
    uint32_t u32() { return get<uint32_t>(); }
    uint64_t u64() { return get<uint64_t>(); }
    int64_t i64() { return get<int64_t>(); }
    double f64() { return get<double>(); }
    uint8_t u8() { return get<uint8_t>(); }
    std::string str() {
        size_t n = checked_len(u64());
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    std::vector<uint8_t> bytes() {
        size_t n = checked_len(u64());
        std::vector<uint8_t> b(n);
        raw(b.data(), n);
        return b;
    }
    Mat mat() {
        size_t r = checked_len(u64());
        size_t c = checked_len(u64());
        Mat m(r, c);
        raw(m.a.data(), m.a.size() * sizeof(double));
        return m;
    }

private:
    size_t checked_len(uint64_t n) {
        if (n > (1ull << 33))
            throw DataError(path_ + ": implausible length field (corrupt file?)");
        return static_cast<size_t>(n);
    }
    template <typename T>
    T get() {
        T x;
        raw(&x, sizeof(x));
        return x;
    }
    void raw(void* p, size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in_.gcount()) != n)
            throw DataError(path_ + ": truncated binary file");
    }
    std::ifstream in_;
    std::string path_;
};

void write_named_mats(BinWriter& w, std::vector<ParamBlock> blocks) {
    w.u32(static_cast<uint32_t>(blocks.size()));
    for (const auto& b : blocks) {
        w.str(b.name);
        w.mat(*b.param);
    }
}

void read_named_mats(BinReader& r, std::vector<ParamBlock> blocks, const std::string& what) {
    uint32_t n = r.u32();
    if (n != blocks.size()) throw DataError(what + ": parameter block count mismatch");
    for (auto& b : blocks) {
        std::string name = r.str();
        if (name != b.name)
            throw DataError(what + ": expected block '" + b.name + "', found '" + name + "'");
        Mat m = r.mat();
        if (b.param->rows != 0 && (m.rows != b.param->rows || m.cols != b.param->cols))
            throw DataError(what + ": shape mismatch in block '" + b.name + "'");
        *b.param = std::move(m);
    }
}

void write_opt_state(BinWriter& w, const OptState& s) {
    w.i64(s.t);
    w.u32(static_cast<uint32_t>(s.m.size()));
    for (const auto& m : s.m) w.mat(m);
    for (const auto& v : s.v) w.mat(v);
}

OptState read_opt_state(BinReader& r) {
    OptState s;
    s.t = r.i64();
    uint32_t n = r.u32();
    s.m.reserve(n);
    s.v.reserve(n);
    for (uint32_t i = 0; i < n; ++i) s.m.push_back(r.mat());
    for (uint32_t i = 0; i < n; ++i) s.v.push_back(r.mat());
    return s;
}

void write_model_header(BinWriter& w, const towers::ModelParams& m) {
    w.i64(m.dims.d_img);
    w.i64(m.dims.d_emb);
    w.i64(m.dims.hidden);
    w.i64(m.dims.k_text);
    w.i64(m.dims.vocab);
    w.f64(m.temperature);
    w.f64(m.label_smoothing);
}

towers::ModelParams read_model(BinReader& r, const std::string& what) {
    towers::ModelParams m;
    m.dims.d_img = r.i64();
    m.dims.d_emb = r.i64();
    m.dims.hidden = r.i64();
    m.dims.k_text = r.i64();
    m.dims.vocab = r.i64();
    m.temperature = r.f64();
    m.label_smoothing = r.f64();
    read_named_mats(r, m.blocks(), what);
    return m;
}

void write_model(BinWriter& w, const towers::ModelParams& m) {
    write_model_header(w, m);
    write_named_mats(w, const_cast<towers::ModelParams&>(m).blocks());
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    BinWriter w(path);
    w.u32(kCkptMagic);
    w.u32(1);  // version
    w.u64(ck.world_hash);
    w.u64(ck.config_hash);
    w.i64(ck.epochs_completed);
    w.i64(ck.global_step);
    w.str(ck.policy_name);

    w.u64(ck.global_order.size());
    for (int64_t x : ck.global_order) w.i64(x);

    w.u32(static_cast<uint32_t>(ck.rng_states.size()));
    for (const auto& [name, state] : ck.rng_states) {
        w.str(name);
        w.str(state);
    }

    write_model(w, ck.model);
    write_opt_state(w, ck.vlp_opt);

    w.i64(ck.scheduler.m);
    w.i64(ck.scheduler.h);
    w.i64(ck.scheduler.n_blocks);
    w.f64(ck.scheduler.eps_floor);
    w.u8(ck.scheduler.global_context ? 1 : 0);
    write_named_mats(w, const_cast<sched::SchedulerPolicy&>(ck.scheduler).blocks());
    write_opt_state(w, ck.sched_opt);

    w.f64(ck.reward_baseline);
    w.u32(kEndMagic);
    w.check();
}

Checkpoint load_checkpoint(const std::string& path) {
    BinReader r(path);
    if (r.u32() != kCkptMagic) throw DataError(path + ": not a checkpoint file");
    if (r.u32() != 1) throw DataError(path + ": unsupported checkpoint version");
    Checkpoint ck;
    ck.world_hash = r.u64();
    ck.config_hash = r.u64();
    ck.epochs_completed = r.i64();
    ck.global_step = r.i64();
    ck.policy_name = r.str();

    uint64_t n_order = r.u64();
    ck.global_order.resize(n_order);
    for (auto& x : ck.global_order) x = r.i64();

    uint32_t n_rng = r.u32();
    for (uint32_t i = 0; i < n_rng; ++i) {
        std::string name = r.str();
        std::string state = r.str();
        ck.rng_states.emplace_back(std::move(name), std::move(state));
    }

    ck.model = read_model(r, path + " (model)");
    ck.vlp_opt = read_opt_state(r);

    ck.scheduler.m = r.i64();
    ck.scheduler.h = r.i64();
    ck.scheduler.n_blocks = r.i64();
    ck.scheduler.eps_floor = r.f64();
    ck.scheduler.global_context = r.u8() != 0;
    ck.scheduler.blk.assign(static_cast<size_t>(4 * ck.scheduler.n_blocks), Mat());
    read_named_mats(r, ck.scheduler.blocks(), path + " (scheduler)");
    ck.sched_opt = read_opt_state(r);

    ck.reward_baseline = r.f64();
    if (r.u32() != kEndMagic) throw DataError(path + ": checkpoint trailer missing");
    return ck;
}

void save_audit(const AuditRecord& rec, const std::string& path) {
    BinWriter w(path);
    w.u32(kAuditMagic);
    w.u32(1);
    w.i64(rec.step);
    w.i64(rec.epoch);
    w.f64(rec.delta);
    w.f64(rec.mlm_before);
    w.f64(rec.mlm_after);
    w.u64(rec.batch_ids.size());
    for (int64_t id : rec.batch_ids) w.i64(id);
    w.u64(rec.mask.batch);
    w.u64(rec.mask.k);
    w.f64(rec.mask.p_mask);
    w.bytes(rec.mask.flags);
    write_model(w, rec.model_before);
    write_model(w, rec.model_after);
    w.u32(kEndMagic);
    w.check();
}

AuditRecord load_audit(const std::string& path) {
    BinReader r(path);
    if (r.u32() != kAuditMagic) throw DataError(path + ": not an audit record");
    if (r.u32() != 1) throw DataError(path + ": unsupported audit version");
    AuditRecord rec;
    rec.step = r.i64();
    rec.epoch = r.i64();
    rec.delta = r.f64();
    rec.mlm_before = r.f64();
    rec.mlm_after = r.f64();
    uint64_t n = r.u64();
    rec.batch_ids.resize(n);
    for (auto& id : rec.batch_ids) id = r.i64();
    rec.mask.batch = r.u64();
    rec.mask.k = r.u64();
    rec.mask.p_mask = r.f64();
    rec.mask.flags = r.bytes();
    if (rec.mask.flags.size() != rec.mask.batch * rec.mask.k)
        throw DataError(path + ": mask size mismatch");
    rec.model_before = read_model(r, path + " (model_before)");
    rec.model_after = read_model(r, path + " (model_after)");
    if (r.u32() != kEndMagic) throw DataError(path + ": audit trailer missing");
    return rec;
}

void dump_sim(const SimDump& d, const std::string& path) {
    gzFile gz = gzopen(path.c_str(), "wb6");
    if (!gz) throw IoError("cannot open for writing: " + path);
    auto put = [&](const void* p, size_t n) {
        if (gzwrite(gz, p, static_cast<unsigned>(n)) != static_cast<int>(n)) {
            gzclose(gz);
            throw IoError("gzwrite failure on " + path);
        }
    };
    auto put_mat = [&](const Mat& m) {
        uint64_t r = m.rows, c = m.cols;
        put(&r, sizeof(r));
        put(&c, sizeof(c));
        put(m.a.data(), m.a.size() * sizeof(double));
    };
    uint32_t magic = 0x4D534D4Eu;  // "NMSM"
    uint32_t version = 1;
    put(&magic, sizeof(magic));
    put(&version, sizeof(version));
    put(&d.epoch, sizeof(d.epoch));
    put(&d.space, sizeof(d.space));
    put_mat(d.raw);
    put_mat(d.presoft);
    put_mat(d.summary);
    gzclose(gz);
}

SimDump load_sim(const std::string& path) {
    gzFile gz = gzopen(path.c_str(), "rb");
    if (!gz) throw IoError("cannot open: " + path);
    auto get = [&](void* p, size_t n) {
        if (gzread(gz, p, static_cast<unsigned>(n)) != static_cast<int>(n)) {
            gzclose(gz);
            throw DataError("truncated sim dump: " + path);
        }
    };
    auto get_mat = [&]() {
        uint64_t r, c;
        get(&r, sizeof(r));
        get(&c, sizeof(c));
        if (r > (1u << 20) || c > (1u << 20)) {
            gzclose(gz);
            throw DataError("implausible sim dump shape: " + path);
        }
        Mat m(static_cast<size_t>(r), static_cast<size_t>(c));
        get(m.a.data(), m.a.size() * sizeof(double));
        return m;
    };
    uint32_t magic, version;
    get(&magic, sizeof(magic));
    get(&version, sizeof(version));
    if (magic != 0x4D534D4Eu) {
        gzclose(gz);
        throw DataError(path + ": not a sim dump");
    }
    if (version != 1) {
        gzclose(gz);
        throw DataError(path + ": unsupported sim dump version");
    }
    SimDump d;
    get(&d.epoch, sizeof(d.epoch));
    get(&d.space, sizeof(d.space));
    d.raw = get_mat();
    d.presoft = get_mat();
    d.summary = get_mat();
    gzclose(gz);
    return d;
}

}  // namespace negmine::io
