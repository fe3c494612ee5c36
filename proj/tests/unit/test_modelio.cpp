#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "retriage/dataset.hpp"
#include "retriage/error.hpp"
#include "retriage/modelio.hpp"
#include "retriage/rng.hpp"

using namespace retriage;
namespace ad = retriage::autodiff;
using namespace retriage::modelio;

namespace {

ModelBundle make_bundle(int input_side = 16, std::uint64_t seed = 5) {
    ModelBundle b;
    b.backbone.input_side = input_side;
    b.backbone.stem_channels = 4;
    b.backbone.blocks = {{8, 6, 3, 2, true, nn::Activation::HardSwish}};
    b.backbone.feature_dim = 8;
    b.preproc.target_side = input_side;
    b.preproc.clahe_enabled = false;
    b.num_grades = 5;
    b.temperature = 1.0f;
    Rng rng(seed);
    b.params = nn::init_params(b.backbone, rng);
    b.head = coral::make_head(b.backbone.feature_dim, b.num_grades, rng);
    return b;
}

// Re-seal a mutated stream so only the intended defect remains.
std::vector<std::uint8_t> reseal(std::vector<std::uint8_t> bytes) {
    const std::size_t body = bytes.size() - 4;
    const std::uint32_t crc = crc32(bytes.data(), body);
    for (int i = 0; i < 4; ++i)
        bytes[body + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((crc >> (8 * i)) & 0xFF);
    return bytes;
}

bool tensors_equal(const ad::Tensor& a, const ad::Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

// Test-local byte assembly, independent of the library writer.
struct GoldenWriter {
    std::vector<std::uint8_t> bytes;
    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u16(std::uint16_t v) { u8(v & 0xFF); u8(v >> 8); }
    void u32(std::uint32_t v) { for (int i = 0; i < 4; ++i) u8((v >> (8 * i)) & 0xFF); }
    void f32(float v) { std::uint32_t b; std::memcpy(&b, &v, 4); u32(b); }
    void f64(double v) {
        std::uint64_t b;
        std::memcpy(&b, &v, 8);
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>((b >> (8 * i)) & 0xFF));
    }
    void name(const char* s) {
        const std::size_t n = std::strlen(s);
        u16(static_cast<std::uint16_t>(n));
        for (std::size_t i = 0; i < n; ++i) u8(static_cast<std::uint8_t>(s[i]));
    }
};

// Bit-by-bit CRC32, reflected 0xEDB88320 (independent of the table-driven
// library implementation).
std::uint32_t golden_crc32(const std::vector<std::uint8_t>& data) {
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::uint8_t byte : data) {
        crc ^= byte;
        for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
    }
    return crc ^ 0xFFFFFFFFu;
}

}  // namespace

TEST_CASE("crc32 matches the standard check value") {
    const char* s = "123456789";
    CHECK(crc32(reinterpret_cast<const std::uint8_t*>(s), 9) == 0xCBF43926u);
    CHECK(golden_crc32(std::vector<std::uint8_t>(s, s + 9)) == 0xCBF43926u);
}

TEST_CASE("save_model is deterministic") {
    const ModelBundle a = make_bundle();
    const ModelBundle b = make_bundle();
    CHECK(save_model(a) == save_model(b));
}

TEST_CASE("save/load roundtrip is bitwise and renormalizes to the same bytes") {
    const ModelBundle bundle = make_bundle();
    const auto bytes = save_model(bundle);
    const ModelBundle loaded = load_model(bytes);

    CHECK(loaded.num_grades == bundle.num_grades);
    CHECK(loaded.temperature == bundle.temperature);
    CHECK(loaded.backbone.input_side == bundle.backbone.input_side);
    CHECK(loaded.backbone.blocks.size() == bundle.backbone.blocks.size());
    CHECK(loaded.preproc.margin_frac == bundle.preproc.margin_frac);
    CHECK(loaded.preproc.channel_mean == bundle.preproc.channel_mean);
    REQUIRE(loaded.params.size() == bundle.params.size());
    for (const auto& [name, t] : bundle.params) CHECK(tensors_equal(t, loaded.params.at(name)));
    CHECK(tensors_equal(loaded.head.weight, bundle.head.weight));
    CHECK(tensors_equal(loaded.head.biases, bundle.head.biases));

    // save . load . save is byte-identical to save (normal form).
    CHECK(save_model(loaded) == bytes);
}

TEST_CASE("a flipped first byte is a magic error") {
    auto bytes = save_model(make_bundle());
    bytes[0] ^= 0xFF;
    try {
        (void)load_model(bytes);
        FAIL("expected ModelIoError");
    } catch (const ModelIoError& e) {
        CHECK(e.kind() == ModelIoError::Kind::BadMagic);
    }
}

TEST_CASE("a flipped last byte is a CRC error") {
    auto bytes = save_model(make_bundle());
    bytes.back() ^= 0x01;
    try {
        (void)load_model(bytes);
        FAIL("expected ModelIoError");
    } catch (const ModelIoError& e) {
        CHECK(e.kind() == ModelIoError::Kind::CrcMismatch);
    }
}

TEST_CASE("corrupted payload bytes are caught by the CRC") {
    auto bytes = save_model(make_bundle());
    bytes[bytes.size() / 2] ^= 0x10;
    try {
        (void)load_model(bytes);
        FAIL("expected ModelIoError");
    } catch (const ModelIoError& e) {
        CHECK(e.kind() == ModelIoError::Kind::CrcMismatch);
    }
}

TEST_CASE("a newer format version is rejected as such") {
    auto bytes = save_model(make_bundle());
    bytes[4] = 0xFF;  // version lives right after the magic
    bytes[5] = 0x00;
    bytes = reseal(bytes);
    try {
        (void)load_model(bytes);
        FAIL("expected ModelIoError");
    } catch (const ModelIoError& e) {
        CHECK(e.kind() == ModelIoError::Kind::Version);
    }
}

TEST_CASE("a truncated stream is a bounds error") {
    auto bytes = save_model(make_bundle());
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(bytes.size() - 40));
    cut.resize(cut.size() + 4);
    cut = reseal(cut);
    try {
        (void)load_model(cut);
        FAIL("expected ModelIoError");
    } catch (const ModelIoError& e) {
        CHECK(e.kind() == ModelIoError::Kind::Bounds);
    }
}

TEST_CASE("missing or extra parameters are invalid") {
    ModelBundle bundle = make_bundle();
    bundle.params.erase("stem.conv");
    CHECK_THROWS_AS((void)load_model(save_model(bundle)), ModelIoError);

    ModelBundle extra = make_bundle();
    extra.params.emplace("rogue", ad::Tensor({2}, {1.0f, 2.0f}));
    try {
        (void)load_model(save_model(extra));
        FAIL("expected ModelIoError");
    } catch (const ModelIoError& e) {
        CHECK(e.kind() == ModelIoError::Kind::Invalid);
    }
}

TEST_CASE("golden byte fixture for a minimal model") {
    // Minimal config: 1-channel stem, no blocks, feature_dim 1, K = 2.
    ModelBundle b;
    b.backbone.input_side = 8;
    b.backbone.stem_channels = 1;
    b.backbone.feature_dim = 1;
    b.preproc = preproc::PreprocConfig{};
    b.num_grades = 2;
    b.temperature = 1.5f;
    for (const auto& [name, shape] : nn::param_shapes(b.backbone)) {
        ad::Tensor t(shape);
        for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<float>(i);
        b.params.emplace(name, std::move(t));
    }
    b.head.num_grades = 2;
    b.head.weight = ad::Tensor({1, 1}, std::vector<float>{2.0f});
    b.head.biases = ad::Tensor({1, 1}, std::vector<float>{-0.5f});

    GoldenWriter g;
    g.u8('R'); g.u8('T'); g.u8('M'); g.u8('1');
    g.u16(1);  // version
    // Backbone: input_side, stem_channels, feature_dim, block count.
    g.u32(8); g.u32(1); g.u32(1); g.u32(0);
    // Preprocessing defaults.
    g.u32(10);          // mask_threshold
    g.f64(0.075);       // margin_frac
    g.f64(30.0);        // sigma_ratio
    g.f64(4.0);         // bg_alpha
    g.f64(128.0);       // bg_bias
    g.u32(8);           // clahe_grid
    g.f64(2.0);         // clahe_clip
    g.u8(1);            // clahe_enabled
    g.u32(64);          // target_side
    g.f64(0.485); g.f64(0.456); g.f64(0.406);
    g.f64(0.229); g.f64(0.224); g.f64(0.225);
    g.u8(0);            // strict_margin_bounds
    g.u32(2);           // K
    g.f32(1.5f);        // temperature
    g.u32(9);           // parameter count, name-sorted
    g.name("coral.biases"); g.u8(2); g.u32(1); g.u32(1); g.f32(-0.5f);
    g.name("coral.weight"); g.u8(2); g.u32(1); g.u32(1); g.f32(2.0f);
    g.name("head.bias");    g.u8(2); g.u32(1); g.u32(1); g.f32(0.0f);
    g.name("head.weight");  g.u8(2); g.u32(1); g.u32(1); g.f32(0.0f);
    g.name("stem.bn.rmean"); g.u8(4); g.u32(1); g.u32(1); g.u32(1); g.u32(1); g.f32(0.0f);
    g.name("stem.bn.rvar");  g.u8(4); g.u32(1); g.u32(1); g.u32(1); g.u32(1); g.f32(0.0f);
    g.name("stem.bn.scale"); g.u8(4); g.u32(1); g.u32(1); g.u32(1); g.u32(1); g.f32(0.0f);
    g.name("stem.bn.shift"); g.u8(4); g.u32(1); g.u32(1); g.u32(1); g.u32(1); g.f32(0.0f);
    g.name("stem.conv"); g.u8(4); g.u32(1); g.u32(3); g.u32(3); g.u32(3);
    for (int i = 0; i < 27; ++i) g.f32(static_cast<float>(i));
    const std::uint32_t crc = golden_crc32(g.bytes);
    g.u32(crc);

    CHECK(save_model(b) == g.bytes);
}

TEST_CASE("the tiny preset exports under 1 MiB") {
    ModelBundle b;
    b.backbone = nn::BackboneConfig::tiny(64);
    b.preproc.target_side = 64;
    Rng rng(9);
    b.params = nn::init_params(b.backbone, rng);
    b.head = coral::make_head(b.backbone.feature_dim, 5, rng);
    const auto bytes = save_model(b);
    CHECK(bytes.size() < (1u << 20));
}

TEST_CASE("infer records no training-graph state and is deterministic") {
    const ModelBundle bundle = make_bundle();
    dataset::SynthParams params;
    params.image_side = 64;
    Rng rng(31);
    const RawImage img = dataset::synth_image(2, params, rng);

    const std::size_t before = ad::recorded_primitive_count();
    const InferResult a = infer(bundle, img);
    CHECK(ad::recorded_primitive_count() == before);

    const InferResult b = infer(bundle, img);
    CHECK(a.grade == b.grade);
    CHECK(a.calibrated_probs == b.calibrated_probs);
    CHECK(a.cumulative_probs.size() == 4);
}

TEST_CASE("exported model inference matches the in-memory model") {
    ModelBundle bundle = make_bundle();
    bundle.temperature = 2.25f;
    const ModelBundle loaded = load_model(save_model(bundle));

    dataset::SynthParams params;
    params.image_side = 64;
    for (int i = 0; i < 10; ++i) {
        Rng rng(1000 + static_cast<std::uint64_t>(i));
        const RawImage img = dataset::synth_image(i % 5, params, rng);
        const InferResult mem = infer(bundle, img);
        const InferResult disk = infer(loaded, img);
        CHECK(mem.grade == disk.grade);
        REQUIRE(mem.calibrated_probs.size() == disk.calibrated_probs.size());
        for (std::size_t k = 0; k < mem.calibrated_probs.size(); ++k)
            CHECK(std::abs(mem.calibrated_probs[k] - disk.calibrated_probs[k]) <= 1e-6f);
        // Calibration never changes the decoded grade.
        int uncal_grade = 0;
        for (float p : mem.cumulative_probs)
            if (p > 0.5f) ++uncal_grade;
        CHECK(uncal_grade == mem.grade);
    }
}

TEST_CASE("dump_header reports the key fields") {
    const auto bytes = save_model(make_bundle());
    const std::string header = dump_header(bytes);
    CHECK(header.find("magic: RTM1") != std::string::npos);
    CHECK(header.find("grades: 5") != std::string::npos);
    CHECK(header.find("temperature") != std::string::npos);
    CHECK(header.find("parameter_scalars") != std::string::npos);
}

TEST_CASE("model file helpers write and read through the filesystem") {
    const ModelBundle bundle = make_bundle();
    const std::string path = "test_model_roundtrip.rtm";
    save_model_file(path, bundle);
    const ModelBundle loaded = load_model_file(path);
    CHECK(save_model(loaded) == save_model(bundle));
    std::remove(path.c_str());
}
