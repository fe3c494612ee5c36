#include "retriage/modelio.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "retriage/error.hpp"

namespace retriage::modelio {

namespace ad = autodiff;

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) {
        u8(static_cast<std::uint8_t>(v & 0xFF));
        u8(static_cast<std::uint8_t>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) {
        const auto b = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>((b >> (8 * i)) & 0xFF));
    }
    void text(const std::string& s) {
        if (s.size() > 0xFFFF) throw ModelIoError(ModelIoError::Kind::Invalid, "name too long");
        u16(static_cast<std::uint16_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }

    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(v);
    }
    std::string text() {
        const std::uint16_t len = u16();
        need(len);
        std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + len));
        pos_ += len;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size())
            throw ModelIoError(ModelIoError::Kind::Bounds,
                               "model stream truncated at byte " + std::to_string(pos_));
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

void write_backbone(Writer& w, const nn::BackboneConfig& cfg) {
    w.i32(cfg.input_side);
    w.i32(cfg.stem_channels);
    w.i32(cfg.feature_dim);
    w.u32(static_cast<std::uint32_t>(cfg.blocks.size()));
    for (const auto& b : cfg.blocks) {
        w.i32(b.expansion_channels);
        w.i32(b.out_channels);
        w.i32(b.kernel_size);
        w.i32(b.stride);
        w.u8(b.use_se ? 1 : 0);
        w.u8(b.activation == nn::Activation::HardSwish ? 1 : 0);
    }
}

nn::BackboneConfig read_backbone(Reader& r) {
    nn::BackboneConfig cfg;
    cfg.input_side = r.i32();
    cfg.stem_channels = r.i32();
    cfg.feature_dim = r.i32();
    const std::uint32_t n = r.u32();
    if (n > 1024)
        throw ModelIoError(ModelIoError::Kind::Invalid, "implausible block count " + std::to_string(n));
    cfg.blocks.resize(n);
    for (auto& b : cfg.blocks) {
        b.expansion_channels = r.i32();
        b.out_channels = r.i32();
        b.kernel_size = r.i32();
        b.stride = r.i32();
        b.use_se = r.u8() != 0;
        b.activation = r.u8() ? nn::Activation::HardSwish : nn::Activation::Relu6;
    }
    return cfg;
}

void write_preproc(Writer& w, const preproc::PreprocConfig& cfg) {
    w.i32(cfg.mask_threshold);
    w.f64(cfg.margin_frac);
    w.f64(cfg.sigma_ratio);
    w.f64(cfg.bg_alpha);
    w.f64(cfg.bg_bias);
    w.i32(cfg.clahe_grid);
    w.f64(cfg.clahe_clip);
    w.u8(cfg.clahe_enabled ? 1 : 0);
    w.i32(cfg.target_side);
    for (double m : cfg.channel_mean) w.f64(m);
    for (double s : cfg.channel_std) w.f64(s);
    w.u8(cfg.strict_margin_bounds ? 1 : 0);
}

preproc::PreprocConfig read_preproc(Reader& r) {
    preproc::PreprocConfig cfg;
    cfg.mask_threshold = r.i32();
    cfg.margin_frac = r.f64();
    cfg.sigma_ratio = r.f64();
    cfg.bg_alpha = r.f64();
    cfg.bg_bias = r.f64();
    cfg.clahe_grid = r.i32();
    cfg.clahe_clip = r.f64();
    cfg.clahe_enabled = r.u8() != 0;
    cfg.target_side = r.i32();
    for (double& m : cfg.channel_mean) m = r.f64();
    for (double& s : cfg.channel_std) s = r.f64();
    cfg.strict_margin_bounds = r.u8() != 0;
    return cfg;
}

std::map<std::string, ad::Tensor> collect_entries(const ModelBundle& bundle) {
    std::map<std::string, ad::Tensor> entries;
    for (const auto& [name, t] : bundle.params) entries.emplace(name, t);
    entries.emplace("coral.weight", bundle.head.weight);
    entries.emplace("coral.biases", bundle.head.biases);
    return entries;
}

}  // namespace

std::vector<std::uint8_t> save_model(const ModelBundle& bundle) {
    bundle.head.validate();
    Writer w;
    for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u16(kFormatVersion);
    write_backbone(w, bundle.backbone);
    write_preproc(w, bundle.preproc);
    w.u32(static_cast<std::uint32_t>(bundle.num_grades));
    w.f32(bundle.temperature);

    const auto entries = collect_entries(bundle);  // std::map: name-sorted
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        w.text(name);
        const auto& shape = t.shape();
        if (shape.size() > 255)
            throw ModelIoError(ModelIoError::Kind::Invalid, "tensor rank too large");
        w.u8(static_cast<std::uint8_t>(shape.size()));
        for (int d : shape) w.u32(static_cast<std::uint32_t>(d));
        for (float v : t.data()) w.f32(v);
    }

    auto bytes = w.take();
    const std::uint32_t crc = crc32(bytes.data(), bytes.size());
    for (int i = 0; i < 4; ++i)
        bytes.push_back(static_cast<std::uint8_t>((crc >> (8 * i)) & 0xFF));
    return bytes;
}

ModelBundle load_model(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw ModelIoError(ModelIoError::Kind::BadMagic, "not a model file (bad magic)");
    if (bytes.size() < 8)
        throw ModelIoError(ModelIoError::Kind::Bounds, "model stream truncated");
    const std::size_t body_len = bytes.size() - 4;
    std::uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<std::uint32_t>(bytes[body_len + static_cast<std::size_t>(i)]) << (8 * i);
    if (crc32(bytes.data(), body_len) != stored_crc)
        throw ModelIoError(ModelIoError::Kind::CrcMismatch, "model file CRC mismatch");

    std::vector<std::uint8_t> body(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(body_len));
    Reader r(body);
    for (char c : kMagic) (void)c, (void)r.u8();
    const std::uint16_t version = r.u16();
    if (version > kFormatVersion)
        throw ModelIoError(ModelIoError::Kind::Version,
                           "model format version " + std::to_string(version) +
                               " is newer than supported " + std::to_string(kFormatVersion));

    ModelBundle bundle;
    bundle.backbone = read_backbone(r);
    bundle.preproc = read_preproc(r);
    bundle.num_grades = static_cast<int>(r.u32());
    bundle.temperature = r.f32();
    if (bundle.num_grades < 2)
        throw ModelIoError(ModelIoError::Kind::Invalid, "model K must be >= 2");
    if (!(bundle.temperature > 0.0f))
        throw ModelIoError(ModelIoError::Kind::Invalid, "model temperature must be > 0");

    const std::uint32_t count = r.u32();
    std::map<std::string, ad::Tensor> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = r.text();
        const int rank = r.u8();
        std::vector<int> shape(static_cast<std::size_t>(rank));
        std::size_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            shape[static_cast<std::size_t>(d)] = static_cast<int>(r.u32());
            if (shape[static_cast<std::size_t>(d)] < 1)
                throw ModelIoError(ModelIoError::Kind::Invalid,
                                   "parameter '" + name + "' has non-positive dimension");
            numel *= static_cast<std::size_t>(shape[static_cast<std::size_t>(d)]);
        }
        if (numel > (1u << 28))
            throw ModelIoError(ModelIoError::Kind::Invalid, "parameter '" + name + "' too large");
        std::vector<float> data(numel);
        for (auto& v : data) v = r.f32();
        if (!entries.emplace(name, ad::Tensor(shape, std::move(data))).second)
            throw ModelIoError(ModelIoError::Kind::Invalid, "duplicate parameter '" + name + "'");
    }
    if (r.pos() != body_len)
        throw ModelIoError(ModelIoError::Kind::Invalid, "trailing bytes after parameter table");

    // The config declares exactly which parameters must exist.
    try {
        bundle.backbone.validate();
        bundle.preproc.validate();
    } catch (const ValidationError& e) {
        throw ModelIoError(ModelIoError::Kind::Invalid, e.what());
    }
    for (const auto& [name, shape] : nn::param_shapes(bundle.backbone)) {
        auto it = entries.find(name);
        if (it == entries.end())
            throw ModelIoError(ModelIoError::Kind::Invalid, "missing parameter '" + name + "'");
        if (it->second.shape() != shape)
            throw ModelIoError(ModelIoError::Kind::Invalid,
                               "parameter '" + name + "' has shape " +
                                   ad::shape_str(it->second.shape()) + ", config declares " +
                                   ad::shape_str(shape));
        bundle.params.emplace(name, it->second);
        entries.erase(it);
    }
    auto wit = entries.find("coral.weight");
    auto bit = entries.find("coral.biases");
    if (wit == entries.end() || bit == entries.end())
        throw ModelIoError(ModelIoError::Kind::Invalid, "missing ordinal head parameters");
    bundle.head.weight = wit->second;
    bundle.head.biases = bit->second;
    bundle.head.num_grades = bundle.num_grades;
    entries.erase(wit);
    entries.erase(bit);
    if (!entries.empty())
        throw ModelIoError(ModelIoError::Kind::Invalid,
                           "unexpected parameter '" + entries.begin()->first + "'");
    if (bundle.head.biases.numel() + 1 != static_cast<std::size_t>(bundle.num_grades))
        throw ModelIoError(ModelIoError::Kind::Invalid, "K does not match bias count + 1");
    if (bundle.head.weight.shape() !=
        std::vector<int>{bundle.backbone.feature_dim, 1})
        throw ModelIoError(ModelIoError::Kind::Invalid, "ordinal head weight shape mismatch");
    return bundle;
}

void save_model_file(const std::string& path, const ModelBundle& bundle) {
    const auto bytes = save_model(bundle);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open model file for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("failed writing model file: " + path);
}

ModelBundle load_model_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open model file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return load_model(bytes);
}

InferResult infer(const ModelBundle& bundle, const RawImage& image) {
    ad::Tensor input = preproc::preprocess(image, bundle.preproc);
    const int side = bundle.preproc.target_side;
    ad::Tensor batch = ad::reshape(input, {1, 3, side, side});
    // Params are shared const state here; eval mode never mutates them.
    nn::Params& params = const_cast<nn::Params&>(bundle.params);
    ad::Tensor features = nn::backbone_forward(bundle.backbone, params, batch, nn::Mode::Eval);
    ad::Tensor logits = coral::coral_logits(features, bundle.head);

    InferResult result;
    const auto raw = logits.data();
    result.cumulative_probs = coral::decode(raw).probs;
    const auto calibrated = coral::apply_temperature(raw, bundle.temperature);
    const auto decoded = coral::decode(calibrated);
    result.calibrated_probs = decoded.probs;
    result.grade = decoded.grade;
    return result;
}

std::string dump_header(const std::vector<std::uint8_t>& bytes) {
    const ModelBundle bundle = load_model(bytes);
    std::ostringstream os;
    os << "magic: RTM1\n";
    os << "format_version: " << kFormatVersion << "\n";
    os << "grades: " << bundle.num_grades << "\n";
    os << "temperature: " << bundle.temperature << "\n";
    os << "backbone.input_side: " << bundle.backbone.input_side << "\n";
    os << "backbone.stem_channels: " << bundle.backbone.stem_channels << "\n";
    os << "backbone.feature_dim: " << bundle.backbone.feature_dim << "\n";
    os << "backbone.blocks: " << bundle.backbone.blocks.size() << "\n";
    for (std::size_t i = 0; i < bundle.backbone.blocks.size(); ++i) {
        const auto& b = bundle.backbone.blocks[i];
        os << "  block" << i << ": expand " << b.expansion_channels << ", out " << b.out_channels
           << ", k" << b.kernel_size << ", stride " << b.stride << (b.use_se ? ", SE" : "")
           << (b.activation == nn::Activation::HardSwish ? ", hswish" : ", relu6") << "\n";
    }
    os << "preproc.target_side: " << bundle.preproc.target_side << "\n";
    os << "preproc.clahe_enabled: " << (bundle.preproc.clahe_enabled ? "true" : "false") << "\n";
    os << "parameters: " << bundle.params.size() + 2 << "\n";
    std::size_t scalars = 0;
    for (const auto& [name, t] : bundle.params) scalars += t.numel();
    scalars += bundle.head.weight.numel() + bundle.head.biases.numel();
    os << "parameter_scalars: " << scalars << "\n";
    return os.str();
}

}  // namespace retriage::modelio
