#include "cvnn/data.hpp"

#include <algorithm>
#include <bit>
#include <cfloat>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace cvnn {

const char* to_string(IoErrc code)
{
    switch (code) {
    case IoErrc::Open: return "open";
    case IoErrc::BadMagic: return "bad-magic";
    case IoErrc::Truncated: return "truncated";
    case IoErrc::Version: return "version";
    case IoErrc::Malformed: return "malformed";
    case IoErrc::SpecMismatch: return "spec-mismatch";
    case IoErrc::Write: return "write";
    }
    return "?";
}

namespace {

// Little-endian byte sink/source, independent of host order.
class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(char(v)); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void str(std::string_view s)
    {
        u32(std::uint32_t(s.size()));
        bytes(s);
    }
    void plane(std::span<const float> p)
    {
        for (float v : p)
            f32(v);
    }

    void save(const fs::path& path) const
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError(IoErrc::Open, "cannot create " + path.string());
        out.write(buf_.data(), std::streamsize(buf_.size()));
        if (!out)
            throw IoError(IoErrc::Write, "write failed: " + path.string());
    }

private:
    void put(std::uint64_t v, int n)
    {
        for (int i = 0; i < n; ++i)
            buf_.push_back(char((v >> (8 * i)) & 0xff));
    }
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(const fs::path& path) : path_(path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw IoError(IoErrc::Open, "cannot open " + path.string());
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    std::size_t remaining() const { return buf_.size() - pos_; }
    std::string bytes(std::size_t n)
    {
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8() { return std::uint8_t(get(1)); }
    std::uint16_t u16() { return std::uint16_t(get(2)); }
    std::uint32_t u32() { return std::uint32_t(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() { return bytes(u32()); }
    void plane(std::span<float> p)
    {
        need(4 * p.size());
        for (float& v : p)
            v = f32();
    }
    void need(std::size_t n) const
    {
        if (remaining() < n)
            throw IoError(IoErrc::Truncated, path_.string() + ": truncated at byte " + std::to_string(pos_) +
                                                 " (need " + std::to_string(n) + ", have " +
                                                 std::to_string(remaining()) + ")");
    }
    const fs::path& path() const { return path_; }

private:
    std::uint64_t get(int n)
    {
        need(std::size_t(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i)
            v |= std::uint64_t(std::uint8_t(buf_[pos_ + i])) << (8 * i);
        pos_ += std::size_t(n);
        return v;
    }

    fs::path path_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

}  // namespace

void write_cvsl(const fs::path& path, const SliceRecord& r)
{
    const auto& s = r.image.shape();
    if (s.size() != 3 || s[0] != 1 || s[1] == 0 || s[2] == 0)
        throw ShapeError("write_cvsl: image must be [1,H,W], got " + to_string(s));
    if (r.label < 0 || r.label > 0xffff)
        throw Error("write_cvsl: label " + std::to_string(r.label) + " out of range");
    if (!r.image.all_finite())
        throw Error("write_cvsl: non-finite pixel in " + r.id);
    Writer w;
    w.bytes("CVSL");
    w.u16(kCvslVersion);
    w.u16(std::uint16_t(r.label));
    w.u32(std::uint32_t(s[1]));
    w.u32(std::uint32_t(s[2]));
    for (std::size_t i = 0; i < r.image.size(); ++i) {
        w.f32(r.image.re()[i]);
        w.f32(r.image.im()[i]);
    }
    w.save(path);
}

SliceRecord read_cvsl(const fs::path& path)
{
    Reader r(path);
    if (r.remaining() < 4 || r.bytes(4) != "CVSL")
        throw IoError(IoErrc::BadMagic, path.string() + ": not a CVSL file");
    const auto version = r.u16();
    if (version != kCvslVersion)
        throw IoError(IoErrc::Version, path.string() + ": CVSL version " + std::to_string(version) + ", expected " +
                                           std::to_string(kCvslVersion));
    SliceRecord rec;
    rec.label = r.u16();
    const std::size_t h = r.u32(), w = r.u32();
    if (h == 0 || w == 0)
        throw IoError(IoErrc::Malformed, path.string() + ": empty image");
    r.need(8 * h * w);
    rec.image = ComplexTensor<float>(Shape{1, h, w});
    for (std::size_t i = 0; i < h * w; ++i) {
        rec.image.re()[i] = r.f32();
        rec.image.im()[i] = r.f32();
    }
    if (r.remaining())
        throw IoError(IoErrc::Malformed, path.string() + ": " + std::to_string(r.remaining()) + " trailing bytes");
    rec.id = path.stem().string();
    return rec;
}

SliceRecord preprocess(const SliceRecord& record, std::size_t target)
{
    if (target == 0)
        throw Error("preprocess: target size must be positive");
    const auto& s = record.image.shape();
    if (s.size() != 3 || s[0] != 1)
        throw ShapeError("preprocess: image must be [1,H,W], got " + to_string(s));
    const std::size_t h = s[1], w = s[2];
    const auto re = record.image.re(), im = record.image.im();

    // Signed offset of the output origin inside the input: positive crops,
    // negative pads.
    const auto offset = [target](std::size_t n) { return (std::ptrdiff_t(n) - std::ptrdiff_t(target)) / 2; };
    const std::ptrdiff_t oy = h >= target ? offset(h) : -std::ptrdiff_t((target - h) / 2);
    const std::ptrdiff_t ox = w >= target ? offset(w) : -std::ptrdiff_t((target - w) / 2);

    // The peak is taken over the retained window, so the output chip itself
    // has unit peak and a second pass changes nothing.
    const auto y0 = std::size_t(std::max<std::ptrdiff_t>(oy, 0)), x0 = std::size_t(std::max<std::ptrdiff_t>(ox, 0));
    const auto y1 = std::min(h, std::size_t(oy + std::ptrdiff_t(target)));
    const auto x1 = std::min(w, std::size_t(ox + std::ptrdiff_t(target)));
    double peak = 0;
    for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x)
            peak = std::max(peak, std::hypot(double(re[y * w + x]), double(im[y * w + x])));
    // Already unit peak up to float rounding: leave the planes alone.
    const bool scale = peak > 0 && std::abs(peak - 1) > 4 * FLT_EPSILON;
    const double inv = scale ? 1 / peak : 1;

    SliceRecord out;
    out.label = record.label;
    out.id = record.id;
    out.image = ComplexTensor<float>(Shape{1, target, target});
    for (std::size_t y = 0; y < target; ++y) {
        const std::ptrdiff_t sy = std::ptrdiff_t(y) + oy;
        if (sy < 0 || sy >= std::ptrdiff_t(h))
            continue;
        for (std::size_t x = 0; x < target; ++x) {
            const std::ptrdiff_t sx = std::ptrdiff_t(x) + ox;
            if (sx < 0 || sx >= std::ptrdiff_t(w))
                continue;
            const std::size_t i = std::size_t(sy) * w + std::size_t(sx);
            out.image.re()[y * target + x] = scale ? float(double(re[i]) * inv) : re[i];
            out.image.im()[y * target + x] = scale ? float(double(im[i]) * inv) : im[i];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifests and datasets

DatasetManifest read_manifest(const fs::path& dir, const std::string& split)
{
    DatasetManifest m;
    {
        std::ifstream in(dir / "classes.txt");
        if (!in)
            throw IoError(IoErrc::Open, "cannot open " + (dir / "classes.txt").string());
        for (std::string line; std::getline(in, line);)
            if (!line.empty())
                m.class_names.push_back(line);
    }
    const fs::path file = dir / (split + ".tsv");
    std::ifstream in(file);
    if (!in)
        throw IoError(IoErrc::Open, "cannot open " + file.string());
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (line.empty())
            continue;
        const auto tab = line.find('\t');
        int label = -1;
        try {
            if (tab != std::string::npos)
                label = std::stoi(line.substr(tab + 1));
        } catch (const std::exception&) {
        }
        if (tab == std::string::npos || label < 0 || std::size_t(label) >= m.class_names.size())
            throw IoError(IoErrc::Malformed, file.string() + ":" + std::to_string(lineno) + ": bad record '" + line + "'");
        m.records.emplace_back(line.substr(0, tab), label);
    }
    return m;
}

void write_manifest(const fs::path& dir, const std::string& split, const DatasetManifest& m)
{
    {
        std::ofstream out(dir / "classes.txt", std::ios::trunc);
        for (const auto& c : m.class_names)
            out << c << '\n';
        if (!out)
            throw IoError(IoErrc::Write, "cannot write " + (dir / "classes.txt").string());
    }
    std::ofstream out(dir / (split + ".tsv"), std::ios::trunc);
    for (const auto& [path, label] : m.records)
        out << path << '\t' << label << '\n';
    if (!out)
        throw IoError(IoErrc::Write, "cannot write " + (dir / (split + ".tsv")).string());
}

template <typename T>
ComplexTensor<T> Dataset::batch(std::span<const std::size_t> indices, std::vector<int>* labels) const
{
    const std::size_t h = records.empty() ? 0 : records.front().image.dim(1);
    const std::size_t w = records.empty() ? 0 : records.front().image.dim(2);
    const std::size_t plane = h * w;
    ComplexTensor<T> out(Shape{indices.size(), 1, h, w});
    if (labels)
        labels->clear();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& r = records.at(indices[b]);
        if (r.image.size() != plane)
            throw ShapeError("dataset: mixed image sizes");
        std::copy(r.image.re().begin(), r.image.re().end(), out.re().begin() + std::ptrdiff_t(b * plane));
        std::copy(r.image.im().begin(), r.image.im().end(), out.im().begin() + std::ptrdiff_t(b * plane));
        if (labels)
            labels->push_back(r.label);
    }
    return out;
}

template ComplexTensor<float> Dataset::batch<float>(std::span<const std::size_t>, std::vector<int>*) const;
template ComplexTensor<double> Dataset::batch<double>(std::span<const std::size_t>, std::vector<int>*) const;

std::vector<std::size_t> Dataset::class_counts() const
{
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (const auto& r : records)
        ++counts.at(std::size_t(r.label));
    return counts;
}

Dataset load_dataset(const fs::path& dir, const std::string& split, std::size_t target)
{
    const auto manifest = read_manifest(dir, split);
    Dataset ds;
    ds.class_names = manifest.class_names;
    for (const auto& [path, label] : manifest.records) {
        auto rec = read_cvsl(dir / path);
        if (rec.label != label)
            throw IoError(IoErrc::Malformed, path + ": label " + std::to_string(rec.label) +
                                                 " disagrees with manifest label " + std::to_string(label));
        if (target)
            rec = preprocess(rec, target);
        const auto& s = rec.image.shape();
        if (s[1] != s[2] || (!ds.records.empty() && s != ds.records.front().image.shape()))
            throw IoError(IoErrc::Malformed, path + ": image " + to_string(s) +
                                                 " is not square or differs from the rest; pass a target size");
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic phase-encoded data

std::vector<std::pair<int, int>> phase_frequencies(std::size_t num_classes, std::size_t size)
{
    // Keep every ramp below a quarter of the sampling rate so neighbouring
    // pixels differ by at most π/2 in phase.
    const int limit = int(size / 4);
    std::vector<std::pair<int, int>> cands;
    for (int k = 0; k <= limit; ++k)
        for (int l = -limit; l <= limit; ++l) {
            if (k == 0 && l <= 0)
                continue;  // (0,0) and the negatives of (0,l)
            if (std::gcd(k, std::abs(l)) != 1)
                continue;
            cands.emplace_back(k, l);
        }
    std::stable_sort(cands.begin(), cands.end(), [](auto a, auto b) {
        return a.first * a.first + a.second * a.second < b.first * b.first + b.second * b.second;
    });
    if (num_classes > cands.size())
        throw Error("generate_phase_dataset: " + std::to_string(num_classes) + " classes exceed the " +
                    std::to_string(cands.size()) + " distinct frequency directions available at size " +
                    std::to_string(size));
    cands.resize(num_classes);
    return cands;
}

PhaseDataset generate_phase_dataset(const PhaseDatasetConfig& cfg)
{
    if (cfg.num_classes < 2)
        throw Error("generate_phase_dataset: need at least 2 classes");
    if (cfg.size < 8)
        throw Error("generate_phase_dataset: size must be at least 8");
    if (cfg.samples_per_class < 2)
        throw Error("generate_phase_dataset: need at least 2 samples per class");
    if (!(cfg.noise_sigma >= 0))
        throw Error("generate_phase_dataset: noise sigma must be non-negative");

    PhaseDataset out;
    out.frequencies = phase_frequencies(cfg.num_classes, cfg.size);
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        const std::string name = "class" + std::to_string(c);
        out.train.class_names.push_back(name);
        out.test.class_names.push_back(name);
    }

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t n = cfg.size;
    const std::size_t n_train = (cfg.samples_per_class * 7 + 5) / 10;
    const double two_pi = 2 * std::numbers::pi;

    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
        const auto [k, l] = out.frequencies[c];
        const std::size_t band_lo = c * n / cfg.num_classes, band_hi = (c + 1) * n / cfg.num_classes;
        for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
            SliceRecord rec;
            rec.label = int(c);
            char id[32];
            std::snprintf(id, sizeof id, "c%zu_%04zu", c, s);
            rec.id = id;
            rec.image = ComplexTensor<float>(Shape{1, n, n});
            for (std::size_t u = 0; u < n; ++u)
                for (std::size_t v = 0; v < n; ++v) {
                    const double scale = cfg.amplitude_discriminable && u >= band_lo && u < band_hi ? 2.0 : 1.0;
                    const double m = scale * std::sqrt(-2 * std::log(1 - uni(rng)));
                    const double phi = cfg.noise_sigma > 0 ? cfg.noise_sigma * noise(rng) : 0.0;
                    const double theta = two_pi * double(k * long(u) + l * long(v)) / double(n) + phi;
                    rec.image.re()[u * n + v] = float(m * std::cos(theta));
                    rec.image.im()[u * n + v] = float(m * std::sin(theta));
                }
            rec = preprocess(rec, n);
            (s < n_train ? out.train : out.test).records.push_back(std::move(rec));
        }
    }
    return out;
}

PhaseDataset write_phase_dataset(const PhaseDatasetConfig& cfg, const fs::path& dir)
{
    auto ds = generate_phase_dataset(cfg);
    std::error_code ec;
    for (const char* split : {"train", "test"}) {
        fs::create_directories(dir / split, ec);
        if (ec)
            throw IoError(IoErrc::Write, "cannot create " + (dir / split).string() + ": " + ec.message());
    }
    for (const auto& [split, data] : {std::pair<std::string, const Dataset*>{"train", &ds.train},
                                      std::pair<std::string, const Dataset*>{"test", &ds.test}}) {
        DatasetManifest m;
        m.class_names = data->class_names;
        for (const auto& rec : data->records) {
            const std::string rel = split + "/" + rec.id + ".cvsl";
            write_cvsl(dir / rel, rec);
            m.records.emplace_back(rel, rec.label);
        }
        write_manifest(dir, split, m);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const fs::path& path, Model<float>& model, const AdamState<float>& opt)
{
    auto& params = model.parameters();
    const bool has_moments = !opt.m.empty();
    if (has_moments && (opt.m.size() != params.size() || opt.v.size() != params.size()))
        throw ShapeError("save_checkpoint: optimizer state does not match the model");
    Writer w;
    w.bytes("CVCK");
    w.u16(kCheckpointVersion);
    w.str(model.spec().to_text());
    w.u64(opt.step);
    w.u32(std::uint32_t(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        if (!p.value().all_finite())
            throw Error("save_checkpoint: parameter " + p.name() + " is not finite");
        w.str(p.name());
        w.u32(std::uint32_t(p.shape().size()));
        for (auto d : p.shape())
            w.u64(d);
        const ComplexTensor<float> zero(p.shape());
        const auto& m = has_moments ? opt.m[i] : zero;
        const auto& v = has_moments ? opt.v[i] : zero;
        for (const auto* t : {&p.value(), &m, &v}) {
            w.plane(t->re());
            w.plane(t->im());
        }
    }
    const auto buffers = model.buffers();
    w.u32(std::uint32_t(buffers.size()));
    for (const auto& b : buffers) {
        w.str(b.name);
        w.u64(b.data.size());
        w.plane(b.data);
    }
    w.save(path);
}

namespace {

void read_body(Reader& r, Model<float>& model, AdamState<float>& opt)
{
    auto& params = model.parameters();
    opt.step = r.u64();
    const std::size_t count = r.u32();
    if (count != params.size())
        throw IoError(IoErrc::SpecMismatch, r.path().string() + ": " + std::to_string(count) +
                                                " parameters stored, model has " + std::to_string(params.size()));
    AdamState<float> loaded = AdamState<float>::zeros_for(params);
    loaded.step = opt.step;
    for (std::size_t i = 0; i < count; ++i) {
        auto& p = params[i];
        const std::string name = r.str();
        Shape shape(r.u32());
        for (auto& d : shape)
            d = r.u64();
        if (name != p.name() || shape != p.shape())
            throw IoError(IoErrc::SpecMismatch, r.path().string() + ": stored parameter " + name + " " +
                                                    to_string(shape) + " does not match " + p.name() + " " +
                                                    to_string(p.shape()));
        for (auto* t : {&p.mutable_value(), &loaded.m[i], &loaded.v[i]}) {
            r.plane(t->re());
            r.plane(t->im());
        }
    }
    auto buffers = model.buffers();
    const std::size_t nbuf = r.u32();
    if (nbuf != buffers.size())
        throw IoError(IoErrc::SpecMismatch, r.path().string() + ": buffer count mismatch");
    for (auto& b : buffers) {
        const std::string name = r.str();
        const std::size_t n = r.u64();
        if (name != b.name || n != b.data.size())
            throw IoError(IoErrc::SpecMismatch, r.path().string() + ": stored buffer " + name + " does not match " +
                                                    b.name);
        r.plane(b.data);
    }
    if (r.remaining())
        throw IoError(IoErrc::Malformed, r.path().string() + ": trailing bytes");
    opt = std::move(loaded);
}

ModelSpec read_header(Reader& r)
{
    if (r.remaining() < 4 || r.bytes(4) != "CVCK")
        throw IoError(IoErrc::BadMagic, r.path().string() + ": not a checkpoint");
    const auto version = r.u16();
    if (version != kCheckpointVersion)
        throw IoError(IoErrc::Version, r.path().string() + ": checkpoint version " + std::to_string(version));
    const std::string text = r.str();
    try {
        return ModelSpec::from_text(text);
    } catch (const IoError&) {
        throw;
    } catch (const Error& e) {
        throw IoError(IoErrc::Malformed, r.path().string() + ": " + e.what());
    }
}

}  // namespace

void load_checkpoint(const fs::path& path, Model<float>& model, AdamState<float>& opt)
{
    Reader r(path);
    const ModelSpec spec = read_header(r);
    if (!(spec == model.spec()))
        throw IoError(IoErrc::SpecMismatch, path.string() + ": checkpoint is for a different model:\n" +
                                                spec.to_text() + "expected:\n" + model.spec().to_text());
    read_body(r, model, opt);
}

LoadedCheckpoint load_checkpoint(const fs::path& path)
{
    Reader r(path);
    const ModelSpec spec = read_header(r);
    LoadedCheckpoint out;
    out.model = std::make_unique<Model<float>>(spec, 0);
    read_body(r, *out.model, out.optimizer);
    return out;
}

}  // namespace cvnn
