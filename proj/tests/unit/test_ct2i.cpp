#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <fstream>

#include "ct2i_fixture.hpp"
#include "talecraft/common/error.hpp"
#include "talecraft/ct2i/character.hpp"
#include "talecraft/ct2i/checksum.hpp"
#include "talecraft/ct2i/compose.hpp"
#include "talecraft/ct2i/diffusion.hpp"
#include "talecraft/ct2i/toy_data.hpp"
#include "talecraft/ct2i/trainer.hpp"
#include "talecraft/layout/schedule.hpp"

using namespace talecraft;
using namespace talecraft::ct2i;
using talecraft::oracle::make_tiny_model;
using talecraft::oracle::named_parameter;
using talecraft::oracle::scratch_dir;
using talecraft::oracle::tiny_ct2i_options;

namespace {

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
    const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).pow(2).mean().item<double>();
    return 10.0 * std::log10(1.0 / std::max(mse, 1e-20));
}

ConditionSet full_condition(const std::string& prompt = "a dog and a cat in a forest") {
    ConditionSet c;
    c.prompt = prompt;
    c.grounding = {{"dog", {0.3, 0.5, 0.4, 0.5}}, {"cat", {0.75, 0.5, 0.4, 0.5}}};
    auto sketch = torch::zeros({1, 8, 8});
    sketch.narrow(1, 2, 4).narrow(2, 2, 4).fill_(1.0);
    c.sketch = compose_sketch_canvas(sketch, {0.3, 0.5, 0.4, 0.5}, tiny_ct2i_options().image_size);
    c.sketch_beta = 1.0;
    return c;
}

/// Opens every gate and gives every adapter a nonzero B.
void perturb_conditioning(ControllableT2IImpl& model, double alpha = 0.5) {
    torch::NoGradGuard no_grad;
    for (auto& item : model.named_parameters()) {
        if (item.key().ends_with("gate_alpha")) item.value().fill_(alpha);
        if (item.key().ends_with("lora_b")) item.value().normal_(0.0, 0.1);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Fourier box embedding

TEST(Fourier, ZeroBoxGivesUnitCosines) {
    auto e = fourier_embed(torch::zeros({4}, torch::kFloat64), 6);
    ASSERT_EQ(e.size(0), 48);
    for (int i = 0; i < 48; ++i) EXPECT_EQ(e[i].item<double>(), i % 2 == 0 ? 0.0 : 1.0);
}

TEST(Fourier, UnitBoxFirstFrequency) {
    auto e = fourier_embed(torch::ones({4}, torch::kFloat64), 3);
    for (int c = 0; c < 4; ++c) {
        EXPECT_NEAR(e[c * 6 + 0].item<double>(), 0.0, 1e-12);
        EXPECT_NEAR(e[c * 6 + 1].item<double>(), -1.0, 1e-12);
    }
}

TEST(Fourier, MatchesScalarTable) {
    torch::manual_seed(3);
    const int n_freq = 8;
    auto boxes = torch::rand({32, 4}, torch::kFloat64);
    auto e = fourier_embed(boxes, n_freq);
    ASSERT_EQ(e.sizes(), (std::vector<std::int64_t>{32, 8 * n_freq}));
    double max_err = 0;
    for (int b = 0; b < 32; ++b) {
        for (int c = 0; c < 4; ++c) {
            const double v = boxes[b][c].item<double>();
            for (int k = 0; k < n_freq; ++k) {
                const double angle = std::ldexp(1.0, k) * M_PI * v;
                max_err = std::max(max_err, std::abs(e[b][c * 2 * n_freq + 2 * k].item<double>() - std::sin(angle)));
                max_err = std::max(max_err, std::abs(e[b][c * 2 * n_freq + 2 * k + 1].item<double>() - std::cos(angle)));
            }
        }
    }
    EXPECT_LT(max_err, 1e-12);
}

TEST(Fourier, ClampsOutOfRange) {
    auto a = fourier_embed(torch::tensor({-0.5, 1.5, 0.2, 0.3}, torch::kFloat64), 4);
    auto b = fourier_embed(torch::tensor({0.0, 1.0, 0.2, 0.3}, torch::kFloat64), 4);
    EXPECT_TRUE(torch::equal(a, b));
}

// ---------------------------------------------------------------------------
// LoRA

TEST(LoRA, DenseTwoByTwoCase) {
    auto w = torch::tensor({1.0, 2.0, 3.0, 4.0}, torch::kFloat64).view({2, 2});
    auto a = torch::tensor({1.0, 0.0}, torch::kFloat64).view({1, 2});
    auto b = torch::tensor({2.0, -1.0}, torch::kFloat64).view({2, 1});
    auto x = torch::tensor({1.0, 1.0}, torch::kFloat64);
    // (W + BA) x by hand: W x = (3, 7), B A x = (2, -1).
    auto h = lora_forward(x, w, a, b);
    EXPECT_DOUBLE_EQ(h[0].item<double>(), 5.0);
    EXPECT_DOUBLE_EQ(h[1].item<double>(), 6.0);
}

TEST(LoRA, ZeroBIsExactlyBase) {
    torch::manual_seed(1);
    auto w = torch::randn({5, 3});
    auto a = torch::randn({2, 3});
    auto x = torch::randn({7, 3});
    EXPECT_TRUE(torch::equal(lora_forward(x, w, a, torch::zeros({5, 2})), torch::matmul(x, w.t())));
}

TEST(LoRA, RankMismatchThrows) {
    EXPECT_THROW(lora_forward(torch::randn({3}), torch::randn({5, 3}), torch::randn({2, 3}), torch::randn({5, 3})),
                 ShapeError);
    EXPECT_THROW(merge_lora(torch::randn({5, 3}), torch::randn({2, 4}), torch::randn({5, 2})), ShapeError);
}

TEST(LoRA, MergeEquivalenceOnRandomShapes) {
    torch::manual_seed(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto in = torch::randint(2, 24, {1}).item<std::int64_t>();
        const auto out = torch::randint(2, 24, {1}).item<std::int64_t>();
        const int rank = static_cast<int>(torch::randint(1, 5, {1}).item<std::int64_t>());
        LoRALinear layer(in, out, rank, trial % 2 == 0);
        {
            torch::NoGradGuard g;
            layer->lora_b.normal_();
        }
        auto x = torch::randn({6, in});
        auto dense = torch::matmul(x, (layer->weight + torch::matmul(layer->lora_b, layer->lora_a)).t());
        if (layer->bias.defined()) dense = dense + layer->bias;
        auto unmerged = layer(x);
        layer->merge();
        auto merged = layer(x);
        EXPECT_LT((unmerged - dense).abs().max().item<double>(), 1e-5);
        EXPECT_LT((merged - unmerged).abs().max().item<double>(), 1e-5);
        layer->unmerge();
        EXPECT_LT((layer(x) - unmerged).abs().max().item<double>(), 1e-5);
    }
}

TEST(LoRA, MergeIsDoubleChecked) {
    LoRALinear layer(4, 4, 2);
    layer->merge();
    EXPECT_TRUE(layer->merged());
    EXPECT_THROW(layer->merge(), ConflictError);
    layer->unmerge();
    EXPECT_THROW(layer->unmerge(), ConflictError);
}

TEST(LoRA, FreshAdapterIsNoOp) {
    torch::manual_seed(2);
    LoRALinear layer(6, 5, 4);
    auto x = torch::randn({3, 6});
    EXPECT_TRUE(torch::equal(layer(x), torch::matmul(x, layer->weight.t())));
    auto rng = layout::make_generator(9);
    layer->reset_adapter(&rng);
    EXPECT_TRUE(torch::equal(layer->lora_b, torch::zeros_like(layer->lora_b)));
    EXPECT_GT(layer->lora_a.abs().sum().item<double>(), 0.0);
}

// ---------------------------------------------------------------------------
// Gated self-attention

namespace {

using Vec2 = std::array<double, 2>;
using Mat2 = std::array<std::array<double, 2>, 2>;

Vec2 mul(const Mat2& m, const Vec2& v) { return {m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]}; }
Vec2 add(const Vec2& a, const Vec2& b) { return {a[0] + b[0], a[1] + b[1]}; }
Vec2 scale(const Vec2& a, double s) { return {a[0] * s, a[1] * s}; }
double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }

Vec2 layer_norm(const Vec2& v) {
    const double mu = (v[0] + v[1]) / 2;
    const double var = ((v[0] - mu) * (v[0] - mu) + (v[1] - mu) * (v[1] - mu)) / 2;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    return {(v[0] - mu) * inv, (v[1] - mu) * inv};
}

struct AttnWeights {
    Mat2 q, k, v, o;
    Vec2 o_bias;
};

/// Single-head attention of `query` over `keys`, all width 2.
Vec2 attend(const AttnWeights& w, const Vec2& query, const std::vector<Vec2>& keys) {
    const auto q = mul(w.q, query);
    std::vector<double> scores;
    double max_s = -1e300;
    for (const auto& k : keys) {
        scores.push_back(dot(q, mul(w.k, k)) / std::sqrt(2.0));
        max_s = std::max(max_s, scores.back());
    }
    double z = 0;
    for (auto& s : scores) z += (s = std::exp(s - max_s));
    Vec2 mix{0, 0};
    for (std::size_t j = 0; j < keys.size(); ++j) mix = add(mix, scale(mul(w.v, keys[j]), scores[j] / z));
    return add(mul(w.o, mix), w.o_bias);
}

torch::Tensor as_tensor(const Mat2& m) {
    return torch::tensor({m[0][0], m[0][1], m[1][0], m[1][1]}, torch::kFloat64).view({2, 2});
}

void load(AttentionImpl& a, const AttnWeights& w) {
    torch::NoGradGuard g;
    a.to_q->weight.copy_(as_tensor(w.q));
    a.to_k->weight.copy_(as_tensor(w.k));
    a.to_v->weight.copy_(as_tensor(w.v));
    a.to_out->weight.copy_(as_tensor(w.o));
    a.to_out->bias.copy_(torch::tensor({w.o_bias[0], w.o_bias[1]}, torch::kFloat64));
}

}  // namespace

TEST(GatedAttention, TwoTokenHandComputation) {
    GatedSelfAttention gsa(2, 1, 0);
    gsa->to(torch::kFloat64);
    const AttnWeights sa{{{{0.5, -0.3}, {0.2, 0.8}}},
                         {{{1.1, 0.4}, {-0.6, 0.9}}},
                         {{{0.7, 0.1}, {-0.2, 1.3}}},
                         {{{0.9, -0.5}, {0.3, 0.6}}},
                         {0.05, -0.1}};
    const AttnWeights ga{{{{1.2, 0.3}, {-0.4, 0.7}}},
                         {{{0.8, -0.9}, {0.5, 0.2}}},
                         {{{-0.3, 1.0}, {0.6, 0.4}}},
                         {{{0.4, 0.2}, {-0.7, 1.1}}},
                         {-0.2, 0.15}};
    load(*gsa->self_attn, sa);
    load(*gsa->gate_attn, ga);
    const double alpha = 0.7;
    {
        torch::NoGradGuard g;
        gsa->gate_alpha.fill_(alpha);
    }
    const Vec2 f{0.3, -1.2};
    const Vec2 g{0.8, 0.5};

    const auto f1 = add(f, attend(sa, layer_norm(f), {layer_norm(f)}));
    const auto joint_out = attend(ga, layer_norm(f1), {layer_norm(f1), layer_norm(g)});
    const auto expected = add(f1, scale(joint_out, std::tanh(alpha)));

    auto out = gsa(torch::tensor({f[0], f[1]}, torch::kFloat64).view({1, 1, 2}),
                   torch::tensor({g[0], g[1]}, torch::kFloat64).view({1, 1, 2}));
    ASSERT_EQ(out.sizes(), (std::vector<std::int64_t>{1, 1, 2}));
    EXPECT_NEAR(out[0][0][0].item<double>(), expected[0], 1e-8);
    EXPECT_NEAR(out[0][0][1].item<double>(), expected[1], 1e-8);
}

TEST(GatedAttention, ClosedGateIsPlainSelfAttention) {
    torch::manual_seed(4);
    GatedSelfAttention gsa(8, 2, 4);
    auto f = torch::randn({2, 5, 8});
    auto g = torch::randn({2, 3, 8});
    auto expected = f + gsa->self_attn(gsa->norm(f));
    EXPECT_TRUE(torch::equal(gsa(f, g), expected));
    EXPECT_TRUE(torch::equal(gsa(f), expected));
}

TEST(GatedAttention, OutputKeepsVisualLength) {
    torch::manual_seed(5);
    GatedSelfAttention gsa(8, 2, 0);
    {
        torch::NoGradGuard ng;
        gsa->gate_alpha.fill_(1.0);
    }
    auto f = torch::randn({1, 6, 8});
    for (int n_g : {0, 1, 7}) EXPECT_EQ(gsa(f, torch::randn({1, n_g, 8})).sizes(), f.sizes());
}

TEST(GatedAttention, MaskedGroundingTokensAreIgnored) {
    torch::manual_seed(6);
    GatedSelfAttention gsa(8, 2, 0);
    {
        torch::NoGradGuard ng;
        gsa->gate_alpha.fill_(1.0);
    }
    auto f = torch::randn({1, 4, 8});
    auto g = torch::randn({1, 2, 8});
    auto padded = torch::cat({g, torch::randn({1, 3, 8})}, 1);
    auto mask = torch::tensor({true, true, false, false, false}).view({1, 5});
    EXPECT_LT((gsa(f, padded, mask) - gsa(f, g)).abs().max().item<double>(), 1e-6);
}

// ---------------------------------------------------------------------------
// Grounding tokens and text encoder

TEST(Grounding, TokenWidthAndBoxDependence) {
    auto model = make_tiny_model(1);
    auto a = model->grounding_tokens({{"dog", {0.3, 0.3, 0.2, 0.2}}});
    auto b = model->grounding_tokens({{"dog", {0.7, 0.6, 0.3, 0.2}}});
    auto c = model->grounding_tokens({{"dog", {0.3, 0.3, 0.2, 0.2}}});
    EXPECT_EQ(a.sizes(), (std::vector<std::int64_t>{1, tiny_ct2i_options().attn_width}));
    EXPECT_TRUE(torch::equal(a, c));
    EXPECT_FALSE(torch::equal(a, b));
}

TEST(Grounding, LearnedTokenChangesPhraseEmbedding) {
    auto model = make_tiny_model(2);
    auto& te = *model->text_encoder;
    te.register_token("<sks>");
    auto before = te.phrase_embedding({"<sks> dog"});
    te.set_token_embedding("<sks>", torch::randn({tiny_ct2i_options().text.width}));
    auto after = te.phrase_embedding({"<sks> dog"});
    EXPECT_FALSE(torch::equal(before, after));
    EXPECT_TRUE(torch::equal(te.phrase_embedding({"dog"}), te.phrase_embedding({"dog"})));
}

TEST(TextEncoder, SpecialTokenRules) {
    EXPECT_TRUE(is_special_token("<sks>"));
    EXPECT_FALSE(is_special_token("sks"));
    EXPECT_FALSE(is_special_token("<Sks>"));
    EXPECT_EQ(split_words("A <sks> Dog, running!"), (std::vector<std::string>{"a", "<sks>", "dog", "running"}));
    TextEncoderOptions o;
    o.width = 8;
    o.custom_slots = 2;
    TextEncoder te(o);
    te->register_token("<a1>");
    EXPECT_THROW(te->register_token("<a1>"), RegistrationError);
    EXPECT_THROW(te->register_token("dog"), RegistrationError);
    te->register_token("<a2>");
    EXPECT_THROW(te->register_token("<a3>"), CapacityError);
    te->unregister_token("<a1>");
    EXPECT_NO_THROW(te->register_token("<a3>"));
    EXPECT_THROW(te->token_embedding("<a1>"), NotFoundError);
}

TEST(TextEncoder, TokenRowIsSeparateFromWords) {
    TextEncoderOptions o;
    o.width = 8;
    TextEncoder te(o);
    auto before = te->tokenize({"a dog"}).tokens;
    te->register_token("<dog>");
    auto tokens = te->tokenize({"a <dog> dog"}).tokens;
    EXPECT_EQ(tokens[0][1].item<std::int64_t>(), before[0][1].item<std::int64_t>());
    EXPECT_GE(tokens[0][2].item<std::int64_t>(), 2 + o.hash_buckets);
    EXPECT_EQ(tokens[0][3].item<std::int64_t>(), before[0][2].item<std::int64_t>());
}

// ---------------------------------------------------------------------------
// Sketch canvas and encoder

TEST(Sketch, FullCanvasBoxFillsCanvas) {
    auto canvas = compose_sketch_canvas(torch::ones({1, 8, 8}), {0.5, 0.5, 1.0, 1.0}, 32);
    EXPECT_TRUE(torch::allclose(canvas, torch::ones({1, 32, 32})));
}

TEST(Sketch, QuarterBoxFillsExactlyThatQuadrant) {
    auto canvas = compose_sketch_canvas(torch::ones({1, 10, 10}), {0.25, 0.25, 0.5, 0.5}, 32);
    auto expected = torch::zeros({1, 32, 32});
    expected.narrow(1, 0, 16).narrow(2, 0, 16).fill_(1.0);
    EXPECT_TRUE(torch::allclose(canvas, expected));
}

TEST(Sketch, CanvasRoundTripPsnr) {
    // Smooth strokes survive 64 -> 128 -> 64 resampling.
    auto yy = torch::linspace(0, 1, 64).view({64, 1});
    auto xx = torch::linspace(0, 1, 64).view({1, 64});
    auto sketch = (0.5 + 0.5 * torch::sin(6.0 * xx + 4.0 * yy) * torch::cos(5.0 * yy)).unsqueeze(0);
    const layout::Box box{0.5, 0.5, 0.5, 0.5};
    auto canvas = compose_sketch_canvas(sketch, box, 256);
    const auto r = box_to_pixels(box, 256, 256);
    ASSERT_EQ(r.x1 - r.x0, 128);
    auto crop = canvas.narrow(1, r.y0, 128).narrow(2, r.x0, 128);
    auto back = torch::nn::functional::interpolate(
                    crop.unsqueeze(0), torch::nn::functional::InterpolateFuncOptions()
                                           .size(std::vector<std::int64_t>{64, 64})
                                           .mode(torch::kBilinear)
                                           .align_corners(false)
                                           .antialias(true))
                    .squeeze(0);
    EXPECT_GT(psnr(back, sketch), 30.0);
    auto outside = canvas.clone();
    outside.narrow(1, r.y0, 128).narrow(2, r.x0, 128).zero_();
    EXPECT_EQ(outside.abs().sum().item<double>(), 0.0);
    EXPECT_GE(canvas.min().item<double>(), 0.0);
    EXPECT_LE(canvas.max().item<double>(), 1.0);
}

TEST(Sketch, DegenerateBoxThrows) {
    EXPECT_THROW(compose_sketch_canvas(torch::ones({1, 4, 4}), {0.5, 0.5, 0.0, 0.3}, 32), InvalidBoxError);
    EXPECT_THROW(compose_sketch_canvas(torch::ones({1, 4, 4}), {0.5, 0.5, 0.001, 0.3}, 32), InvalidBoxError);
    EXPECT_THROW(compose_sketch_canvas(torch::ones({3, 4, 4}), {0.5, 0.5, 0.5, 0.5}, 32), ShapeError);
}

TEST(Sketch, MergeTakesMaximum) {
    auto a = compose_sketch_canvas(torch::full({1, 4, 4}, 0.4), {0.25, 0.5, 0.5, 1.0}, 8);
    auto b = compose_sketch_canvas(torch::full({1, 4, 4}, 0.9), {0.5, 0.5, 0.5, 0.5}, 8);
    auto m = merge_sketch_canvases({a, b}, 8);
    EXPECT_FLOAT_EQ(m[0][0][0].item<float>(), 0.4f);
    EXPECT_FLOAT_EQ(m[0][3][3].item<float>(), 0.9f);
    EXPECT_FLOAT_EQ(m[0][0][7].item<float>(), 0.0f);
    EXPECT_EQ(merge_sketch_canvases({}, 8).sum().item<double>(), 0.0);
}

TEST(Sketch, EncoderLevelsAndBlankCache) {
    torch::manual_seed(7);
    SketchEncoder enc(64, 16, 32, 64);
    auto feats = enc(torch::rand({2, 1, 64, 64}));
    ASSERT_EQ(feats.size(), 2u);
    EXPECT_EQ(feats[0].sizes(), (std::vector<std::int64_t>{2, 32, 16, 16}));
    EXPECT_EQ(feats[1].sizes(), (std::vector<std::int64_t>{2, 64, 8, 8}));

    const auto& blank = enc->blank_features();
    const auto* first = blank[0].data_ptr();
    EXPECT_EQ(enc->blank_features()[0].data_ptr(), first);
    auto direct = enc(torch::zeros({1, 1, 64, 64}));
    EXPECT_TRUE(torch::equal(blank[0], direct[0]));
    {
        torch::NoGradGuard g;
        enc->conv_in->bias.add_(1.0);
    }
    auto refreshed = enc->blank_features();
    EXPECT_FALSE(torch::equal(refreshed[0], direct[0]));
    EXPECT_TRUE(torch::equal(refreshed[0], enc(torch::zeros({1, 1, 64, 64}))[0]));
}

// ---------------------------------------------------------------------------
// Denoiser

TEST(Denoiser, ShapeForToyConfig) {
    auto o = tiny_ct2i_options();
    o.image_size = 8;
    auto model = make_tiny_model(1, o);
    auto z = torch::randn({1, 4, 8, 8});
    auto cond = full_condition();
    cond.sketch = compose_sketch_canvas(torch::ones({1, 4, 4}), {0.3, 0.5, 0.4, 0.5}, 8);
    auto out = model->predict_noise(z, torch::tensor({10}, torch::kLong), model->embed({cond}));
    EXPECT_EQ(out.sizes(), z.sizes());
}

TEST(Denoiser, GateClosureMatchesTextOnlyBackbone) {
    auto model = make_tiny_model(3);
    auto z = torch::randn({1, 4, 16, 16});
    auto t = torch::tensor({500}, torch::kLong);
    auto full = full_condition();
    full.sketch_beta = 0.0;
    model->text_encoder->register_token("<sks>");
    full.prompt = "a <sks> dog and a cat in a forest";
    ConditionSet text_only;
    text_only.prompt = full.prompt;
    auto a = model->predict_noise(z, t, model->embed({full}));
    auto b = model->predict_noise(z, t, model->embed({text_only}));
    EXPECT_TRUE(torch::equal(a, b));
}

TEST(Denoiser, ZeroSketchStrengthIsBitIdentical) {
    auto model = make_tiny_model(4);
    perturb_conditioning(*model);
    auto z = torch::randn({1, 4, 16, 16});
    auto t = torch::tensor({300}, torch::kLong);
    auto with_sketch = full_condition();
    with_sketch.sketch_beta = 0.0;
    auto without = with_sketch;
    without.sketch = torch::Tensor();
    EXPECT_TRUE(torch::equal(model->predict_noise(z, t, model->embed({with_sketch})),
                             model->predict_noise(z, t, model->embed({without}))));
    with_sketch.sketch_beta = 1.0;
    EXPECT_FALSE(torch::equal(model->predict_noise(z, t, model->embed({with_sketch})),
                              model->predict_noise(z, t, model->embed({without}))));
}

TEST(Denoiser, BatchedConditionsMatchSingles) {
    auto model = make_tiny_model(5);
    perturb_conditioning(*model);
    auto z = torch::randn({2, 4, 16, 16});
    auto t = torch::tensor({100, 700}, torch::kLong);
    auto a = full_condition();
    ConditionSet b;
    b.prompt = "a tent";
    b.grounding = {{"tent", {0.5, 0.5, 0.6, 0.6}}};
    auto both = model->predict_noise(z, t, model->embed({a, b}));
    auto single_a = model->predict_noise(z.narrow(0, 0, 1), t.narrow(0, 0, 1), model->embed({a}));
    auto single_b = model->predict_noise(z.narrow(0, 1, 1), t.narrow(0, 1, 1), model->embed({b}));
    EXPECT_LT((both.narrow(0, 0, 1) - single_a).abs().max().item<double>(), 1e-5);
    EXPECT_LT((both.narrow(0, 1, 1) - single_b).abs().max().item<double>(), 1e-5);
}

TEST(Denoiser, NonFiniteActivationNamesStage) {
    auto model = make_tiny_model(6);
    {
        torch::NoGradGuard g;
        model->unet->conv_in->weight.fill_(std::numeric_limits<float>::quiet_NaN());
    }
    try {
        model->predict_noise(torch::randn({1, 4, 16, 16}), torch::tensor({1}, torch::kLong),
                             model->embed({ConditionSet::unconditional()}));
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_EQ(e.where(), "unet.down0");
    }
}

TEST(Denoiser, RejectsWrongChannelCount) {
    auto model = make_tiny_model(7);
    EXPECT_THROW(model->predict_noise(torch::randn({1, 5, 16, 16}), torch::tensor({1}, torch::kLong),
                                      model->embed({ConditionSet::unconditional()})),
                 ShapeError);
}

TEST(Denoiser, SketchStrengthRangeChecked) {
    auto model = make_tiny_model(8);
    auto c = full_condition();
    c.sketch_beta = 2.5;
    EXPECT_THROW(model->embed({c}), InvalidRequestError);
    c.sketch_beta = 2.0;
    EXPECT_NO_THROW(model->embed({c}));
}

TEST(Denoiser, FiniteDifferenceGradients) {
    auto model = make_tiny_model(9);
    model->to(torch::kFloat64);
    perturb_conditioning(*model, 0.6);
    DiffusionSchedule schedule;
    torch::manual_seed(10);
    auto latents = torch::randn({1, 4, 16, 16}, torch::kFloat64);
    auto eps = torch::randn({1, 4, 16, 16}, torch::kFloat64);
    auto t = torch::tensor({400}, torch::kLong);
    const std::vector<ConditionSet> conds{full_condition()};

    const std::vector<std::pair<std::string, std::vector<std::int64_t>>> probes = {
        {"sketch_encoder.conv_in.weight", {3, 0, 1, 1}},
        {"sketch_encoder.block2.conv1.weight", {1, 2, 0, 1}},
        {"unet.down0_attn.gsa.gate_attn.to_q.weight", {2, 5}},
        {"unet.down1_attn.gsa.gate_alpha", {0}},
        {"grounding.fc1.weight", {4, 3}},
        {"unet.down0_attn.gsa.self_attn.to_k.lora_a", {1, 2}},
        {"unet.up0_attn.cross_attn.to_v.lora_b", {3, 0}},
    };
    model->set_trainable(TrainPhase::all);
    for (auto& item : model->named_parameters()) item.value().set_requires_grad(true);
    model->zero_grad();
    diffusion_loss(*model, schedule, latents, conds, t, eps).backward();

    for (const auto& [name, index] : probes) {
        auto p = named_parameter(*model, name);
        std::vector<at::indexing::TensorIndex> idx(index.begin(), index.end());
        const double analytic = p.grad().index(idx).item<double>();
        const double h = 1e-6;
        double plus = 0, minus = 0;
        {
            torch::NoGradGuard g;
            const double original = p.index(idx).item<double>();
            p.index_put_(idx, original + h);
            plus = diffusion_loss(*model, schedule, latents, conds, t, eps).item<double>();
            p.index_put_(idx, original - h);
            minus = diffusion_loss(*model, schedule, latents, conds, t, eps).item<double>();
            p.index_put_(idx, original);
        }
        const double numeric = (plus - minus) / (2 * h);
        const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
        EXPECT_GT(std::abs(analytic), 1e-9) << name;
        EXPECT_LT(rel, 1e-3) << name << " analytic " << analytic << " numeric " << numeric;
    }
}

// ---------------------------------------------------------------------------
// Schedule, guidance and sampling

TEST(Diffusion, ScheduleEndpoints) {
    DiffusionSchedule s;
    EXPECT_EQ(s.alpha_bar(-1), 1.0);
    EXPECT_NEAR(s.alpha_bar(0), 1.0 - 0.00085, 1e-12);
    EXPECT_LT(s.alpha_bar(999), 0.01);
    EXPECT_EQ(s.ddim_timesteps(1), (std::vector<int>{999}));
    auto ts = s.ddim_timesteps(50);
    ASSERT_EQ(ts.size(), 50u);
    EXPECT_EQ(ts.front(), 999);
    EXPECT_EQ(ts.back(), 19);
    for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_LT(ts[i], ts[i - 1]);
}

TEST(Diffusion, CfgMixExamples) {
    auto c = torch::tensor({1.0, -2.0});
    auto u = torch::tensor({0.5, 3.0});
    EXPECT_TRUE(torch::equal(cfg_mix(c, u, 1.0), c));
    EXPECT_TRUE(torch::equal(cfg_mix(c, u, 0.0), u));
    EXPECT_DOUBLE_EQ(cfg_mix(torch::ones({1}, torch::kFloat64), torch::zeros({1}, torch::kFloat64), 6.0).item<double>(),
                     6.0);
}

TEST(Diffusion, SamplingIsDeterministic) {
    auto model = make_tiny_model(11);
    DiffusionSchedule schedule;
    SampleOptions o{4, 6.0, 21};
    auto a = ddim_sample(*model, schedule, full_condition(), o);
    auto b = ddim_sample(*model, schedule, full_condition(), o);
    EXPECT_TRUE(torch::equal(a, b));
    EXPECT_EQ(a.sizes(), (std::vector<std::int64_t>{3, 16, 16}));
    o.seed = 22;
    EXPECT_FALSE(torch::equal(a, ddim_sample(*model, schedule, full_condition(), o)));
}

TEST(Diffusion, SingleStepIsCleanPrediction) {
    auto model = make_tiny_model(12);
    DiffusionSchedule schedule;
    const auto cond = full_condition();
    auto z = ddim_sample_latent(*model, schedule, cond, {1, 1.0, 5});

    auto rng = layout::make_generator(5);
    auto z_t = torch::randn({1, 4, 16, 16}, rng, torch::TensorOptions(torch::kFloat32));
    torch::NoGradGuard g;
    auto eps = model->predict_noise(z_t, torch::tensor({999}, torch::kLong), model->embed({cond}));
    const double ab = schedule.alpha_bar(999);
    auto x0 = (z_t - std::sqrt(1 - ab) * eps) / std::sqrt(ab);
    EXPECT_LT((z - x0.squeeze(0)).abs().max().item<double>(), 1e-4);
}

TEST(Diffusion, NoiseOracleGivesZeroLoss) {
    auto model = make_tiny_model(13);
    DiffusionSchedule schedule;
    auto params = model->set_trainable(TrainPhase::all);
    torch::optim::SGD opt(params, 0.1);
    auto rng = layout::make_generator(1);
    TrainStepOptions o;
    o.noise_oracle = [](const torch::Tensor& eps) { return eps; };
    const auto before = model->group_checksums();
    const std::vector<TrainingExample> batch{{torch::randn({4, 16, 16}), full_condition()}};
    EXPECT_EQ(train_step(*model, schedule, batch, opt, rng, o), 0.0);
    EXPECT_EQ(model->group_checksums(), before);
}

TEST(Diffusion, TrainingPhasesTouchOnlyTheirGroup) {
    const std::vector<std::pair<TrainPhase, std::vector<ParamGroup>>> phases = {
        {TrainPhase::backbone, {ParamGroup::backbone, ParamGroup::inpaint}},
        {TrainPhase::sketch, {ParamGroup::sketch}},
        {TrainPhase::grounding, {ParamGroup::grounding}},
        {TrainPhase::lora, {ParamGroup::lora}},
    };
    DiffusionSchedule schedule;
    for (const auto& [phase, trained] : phases) {
        auto model = make_tiny_model(14);
        model->text_encoder->register_token("<sks>");
        auto cond = full_condition("a <sks> dog and a cat in a forest");
        auto params = model->set_trainable(phase);
        torch::optim::Adam opt(params, torch::optim::AdamOptions(1e-3));
        auto rng = layout::make_generator(2);
        TrainStepOptions o;
        o.cond_dropout = 0.0;
        o.inpaint_probability = phase == TrainPhase::backbone ? 1.0 : 0.0;
        const auto before = model->group_checksums();
        train_step(*model, schedule, {{torch::randn({4, 16, 16}), cond}}, opt, rng, o);
        const auto after = model->group_checksums();
        for (const auto& [group, sum] : before) {
            const bool should_change =
                std::find(trained.begin(), trained.end(), group) != trained.end();
            if (should_change) {
                EXPECT_NE(after.at(group), sum) << to_string(group) << " in phase " << static_cast<int>(phase);
            } else {
                EXPECT_EQ(after.at(group), sum) << to_string(group) << " in phase " << static_cast<int>(phase);
            }
        }
    }
}

TEST(Diffusion, NonFiniteLossAborts) {
    auto model = make_tiny_model(15);
    DiffusionSchedule schedule;
    auto params = model->set_trainable(TrainPhase::all);
    torch::optim::SGD opt(params, 0.1);
    auto rng = layout::make_generator(1);
    TrainStepOptions o;
    o.noise_oracle = [](const torch::Tensor& eps) { return eps * std::numeric_limits<float>::infinity(); };
    const std::vector<TrainingExample> batch{{torch::randn({4, 16, 16}), {"a dog"}}};
    EXPECT_THROW(train_step(*model, schedule, batch, opt, rng, o), NumericalError);
}

// ---------------------------------------------------------------------------
// Inpainting

TEST(Inpaint, InputHasNineChannels) {
    auto x = build_inpaint_input(torch::randn({2, 4, 8, 8}), torch::randn({2, 4, 8, 8}), torch::ones({2, 1, 8, 8}));
    EXPECT_EQ(x.size(1), 9);
    EXPECT_THROW(build_inpaint_input(torch::randn({2, 4, 8, 8}), torch::randn({2, 4, 4, 4}), torch::ones({2, 1, 8, 8})),
                 ShapeError);
    EXPECT_THROW(build_inpaint_input(torch::randn({2, 4, 8, 8}), torch::randn({2, 4, 8, 8}), torch::ones({2, 2, 8, 8})),
                 ShapeError);
    EXPECT_THROW(build_inpaint_input(torch::randn({2, 3, 8, 8}), torch::randn({2, 4, 8, 8}), torch::ones({2, 1, 8, 8})),
                 ShapeError);
}

TEST(Inpaint, BoxMaskCoversTouchedCells) {
    auto m = box_mask({0.5, 0.5, 0.5, 0.5}, 8);
    EXPECT_EQ(m.sum().item<double>(), 16.0);
    EXPECT_EQ(m[0][2][2].item<float>(), 1.0f);
    EXPECT_EQ(m[0][1][2].item<float>(), 0.0f);
    auto partial = box_mask({0.5, 0.5, 0.3, 0.3}, 8);  // [0.35, 0.65] * 8 = [2.8, 5.2]
    EXPECT_EQ(partial.sum().item<double>(), 16.0);
}

TEST(Inpaint, ZeroMaskPreservesOriginal) {
    auto model = make_tiny_model(16);
    DiffusionSchedule schedule;
    torch::manual_seed(3);
    InpaintSpec spec{torch::randn({4, 16, 16}), torch::zeros({1, 16, 16})};
    auto z = ddim_sample_latent(*model, schedule, full_condition(), {5, 6.0, 1}, &spec);
    EXPECT_LT((z - spec.original_latent).abs().max().item<double>(), 1e-6);
}

TEST(Inpaint, BoxMaskPreservesOutside) {
    auto model = make_tiny_model(17);
    DiffusionSchedule schedule;
    torch::manual_seed(4);
    InpaintSpec spec{torch::randn({4, 16, 16}), box_mask({0.5, 0.5, 0.5, 0.5}, 16)};
    auto z = ddim_sample_latent(*model, schedule, full_condition(), {5, 6.0, 1}, &spec);
    auto outside = (1 - spec.mask).expand_as(z);
    EXPECT_LT(((z - spec.original_latent) * outside).abs().max().item<double>(), 1e-6);
    EXPECT_GT(((z - spec.original_latent) * spec.mask).abs().max().item<double>(), 1e-3);

    InpaintSpec full{spec.original_latent, torch::ones({1, 16, 16})};
    auto regenerated = ddim_sample_latent(*model, schedule, full_condition(), {5, 6.0, 1}, &full);
    EXPECT_GT((regenerated - spec.original_latent).abs().min().item<double>(), 0.0);
}

TEST(Inpaint, RejectsWrongResolution) {
    auto model = make_tiny_model(18);
    DiffusionSchedule schedule;
    InpaintSpec spec{torch::randn({4, 8, 8}), torch::zeros({1, 8, 8})};
    EXPECT_THROW(ddim_sample_latent(*model, schedule, {"a dog"}, {2, 1.0, 1}, &spec), ShapeError);
}

// ---------------------------------------------------------------------------
// Persistence

TEST(ModelIo, SaveLoadRoundTripAndFingerprint) {
    auto dir = scratch_dir("ct2i_model");
    auto model = make_tiny_model(19);
    model->save(dir / "model.pt");
    auto other = make_tiny_model(20);
    other->load(dir / "model.pt");
    EXPECT_EQ(other->group_checksums(), model->group_checksums());

    auto o = tiny_ct2i_options();
    o.lora_rank = 2;
    auto different = make_tiny_model(21, o);
    EXPECT_THROW(different->load(dir / "model.pt"), ConfigError);
    EXPECT_THROW(other->load(dir / "missing.pt"), ConfigError);
}

TEST(ModelIo, IdentityCodecRoundTrip) {
    auto model = make_tiny_model(22);
    auto img = torch::rand({2, 3, 16, 16});
    auto z = model->codec->encode(img);
    EXPECT_EQ(z.sizes(), (std::vector<std::int64_t>{2, 4, 16, 16}));
    EXPECT_LT((model->codec->decode(z) - img).abs().max().item<double>(), 1e-6);
}

TEST(ModelIo, AutoencoderShapes) {
    torch::manual_seed(1);
    LatentCodec codec(LatentMode::autoencoder, 64);
    auto z = codec->encode(torch::rand({1, 3, 64, 64}));
    EXPECT_EQ(z.sizes(), (std::vector<std::int64_t>{1, 4, 16, 16}));
    EXPECT_EQ(codec->decode(z).sizes(), (std::vector<std::int64_t>{1, 3, 64, 64}));
}

// ---------------------------------------------------------------------------
// Characters

namespace {

CharacterBundle random_bundle(ControllableT2IImpl& model, const std::string& name, const std::string& token) {
    CharacterBundle b;
    b.name = name;
    b.token = token;
    b.class_noun = "dog";
    b.rank = model.options().lora_rank;
    b.config_hash = model.options().fingerprint();
    for (auto& [path, layer] : lora_layers(model)) {
        b.adapters[path] = {torch::randn(layer->lora_a.sizes()), torch::randn(layer->lora_b.sizes()) * 0.05};
    }
    b.token_embedding = torch::randn({model.options().text.width});
    b.reference_images = {"0.png", "1.png"};
    b.training = {{"steps", 3}};
    return b;
}

}  // namespace

TEST(Character, AdapterLayersCoverQkvOfSelfAndCrossAttention) {
    auto model = make_tiny_model(23);
    auto layers = lora_layers(*model);
    // 5 transformer blocks, self + cross attention, q/k/v each.
    EXPECT_EQ(layers.size(), 30u);
    for (const auto& [path, layer] : layers) {
        EXPECT_TRUE(path.find("self_attn") != std::string::npos || path.find("cross_attn") != std::string::npos)
            << path;
        EXPECT_EQ(layer->rank(), 4);
    }
}

TEST(Character, BundleRoundTrip) {
    auto model = make_tiny_model(24);
    torch::manual_seed(1);
    auto bundle = random_bundle(*model, "Rex", "<sks>");
    auto dir = scratch_dir("bundle_io");
    save_bundle(bundle, dir / "rex");
    auto loaded = load_bundle(dir / "rex");
    EXPECT_EQ(loaded.name, "Rex");
    EXPECT_EQ(loaded.token, "<sks>");
    EXPECT_EQ(loaded.class_noun, "dog");
    EXPECT_EQ(loaded.rank, bundle.rank);
    EXPECT_EQ(loaded.config_hash, bundle.config_hash);
    EXPECT_EQ(loaded.reference_images, bundle.reference_images);
    EXPECT_EQ(loaded.training, bundle.training);
    ASSERT_EQ(loaded.adapters.size(), bundle.adapters.size());
    for (const auto& [path, w] : bundle.adapters) {
        EXPECT_TRUE(torch::equal(loaded.adapters.at(path).a, w.a)) << path;
        EXPECT_TRUE(torch::equal(loaded.adapters.at(path).b, w.b)) << path;
    }
    EXPECT_TRUE(torch::equal(loaded.token_embedding, bundle.token_embedding));
}

TEST(Character, TensorFileLayout) {
    auto dir = scratch_dir("tensor_file");
    write_tensor_file(dir / "t.bin", {{"m", torch::tensor({1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f}).view({2, 3})}});
    std::ifstream in(dir / "t.bin", std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
    // magic, version, count, name length, "m", rank, 2 dims, 6 floats
    ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 1 + 4 + 8 + 24);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TCAD");
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[8], 1);
    EXPECT_EQ(bytes[16], 'm');
    float last = 0;
    std::memcpy(&last, bytes.data() + bytes.size() - 4, 4);
    EXPECT_EQ(last, 6.0f);

    std::ofstream(dir / "bad.bin", std::ios::binary) << "NOPE";
    EXPECT_THROW(read_tensor_file(dir / "bad.bin"), ParseError);
    std::ofstream(dir / "short.bin", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), 30);
    EXPECT_THROW(read_tensor_file(dir / "short.bin"), ParseError);
    EXPECT_THROW(read_tensor_file(dir / "missing.bin"), NotFoundError);
}

TEST(Character, AttachAndDetachRestoresBase) {
    auto model = make_tiny_model(25);
    torch::manual_seed(2);
    auto bundle = random_bundle(*model, "Rex", "<sks>");
    auto z = torch::randn({1, 4, 16, 16});
    auto t = torch::tensor({200}, torch::kLong);
    ConditionSet plain{"a dog in a park"};
    auto base = model->predict_noise(z, t, model->embed({plain}));
    {
        AdapterScope scope(*model, bundle);
        EXPECT_TRUE(model->text_encoder->has_token("<sks>"));
        EXPECT_FALSE(torch::equal(model->predict_noise(z, t, model->embed({plain})), base));
    }
    EXPECT_FALSE(model->text_encoder->has_token("<sks>"));
    EXPECT_TRUE(torch::equal(model->predict_noise(z, t, model->embed({plain})), base));

    bundle.config_hash = "deadbeef";
    EXPECT_THROW(AdapterScope(*model, bundle), ConfigError);
}

TEST(Character, PersonalizationContract) {
    auto model = make_tiny_model(26);
    DiffusionSchedule schedule;
    auto images = make_character_images("dog", {200, 40, 200}, 5, 1, 16);
    const auto base = model->group_checksums();

    PersonalizationOptions none;
    none.steps = 0;
    auto noop = train_personalization(*model, schedule, "Rex", "<sks>", "dog", images, {}, none);
    for (const auto& [path, w] : noop.adapters) EXPECT_EQ(w.b.abs().sum().item<double>(), 0.0) << path;

    auto z = torch::randn({1, 4, 16, 16});
    auto t = torch::tensor({200}, torch::kLong);
    auto base_out = model->predict_noise(z, t, model->embed({{"a dog"}}));
    {
        AdapterScope scope(*model, noop);
        EXPECT_TRUE(torch::equal(model->predict_noise(z, t, model->embed({{"a dog"}})), base_out));
    }

    auto reg = render_regularization_set(*model, schedule, "dog", 2, 3, 2, 6.0);
    ASSERT_EQ(reg.size(), 2u);
    PersonalizationOptions few;
    few.steps = 3;
    few.batch_size = 2;
    few.lr = 1e-2;
    auto rex = train_personalization(*model, schedule, "Rex", "<sks>", "dog", images, reg, few);
    few.seed = 1;
    auto tom = train_personalization(*model, schedule, "Tom", "<yty>", "cat",
                                     make_character_images("cat", {30, 200, 200}, 6, 2, 16), reg, few);
    for (auto& [group, sum] : model->group_checksums()) {
        if (group != ParamGroup::lora) EXPECT_EQ(sum, base.at(group)) << to_string(group);
    }
    EXPECT_FALSE(model->text_encoder->has_token("<sks>"));

    bool any_trained = false;
    for (const auto& [path, w] : rex.adapters) {
        any_trained = any_trained || w.b.abs().sum().item<double>() > 0;
        EXPECT_NE(w.a.data_ptr(), tom.adapters.at(path).a.data_ptr());
        EXPECT_NE(w.b.data_ptr(), tom.adapters.at(path).b.data_ptr());
    }
    EXPECT_TRUE(any_trained);
    EXPECT_EQ(rex.training["images"], 5);

    EXPECT_THROW(train_personalization(*model, schedule, "X", "<abc>", "dog",
                                       std::vector<torch::Tensor>(images.begin(), images.begin() + 4), {}, none),
                 ValidationError);
    EXPECT_THROW(train_personalization(*model, schedule, "X", "<sks>", "dog", images, {}, none, {"<sks>"}),
                 RegistrationError);
    EXPECT_THROW(train_personalization(*model, schedule, "X", "sks", "dog", images, {}, none), RegistrationError);
}

// ---------------------------------------------------------------------------
// Iterative composition

TEST(Compose, TokenHelpers) {
    EXPECT_EQ(strip_special_tokens("a <sks> dog and a <yty> cat"), "a dog and a cat");
    EXPECT_EQ(inject_token("a dog and a cat in a forest", "dog", "<sks>"), "a <sks> dog and a cat in a forest");
    EXPECT_EQ(inject_token("a <sks> dog", "dog", "<sks>"), "a <sks> dog");
    EXPECT_EQ(inject_token("A Cat, sleeping", "cat", "<yty>"), "A <yty> Cat, sleeping");
    EXPECT_EQ(inject_token("a forest", "dog", "<sks>"), "a forest, <sks> dog");
    EXPECT_EQ(head_noun("<yty> fluffy cat"), "cat");
}

namespace {

struct ComposeFixture {
    ControllableT2I model = make_tiny_model(27);
    DiffusionSchedule schedule;
    std::map<std::string, CharacterBundle> bundles;
    ComposeRequest request;

    ComposeFixture() {
        torch::manual_seed(5);
        bundles["Rex"] = random_bundle(*model, "Rex", "<sks>");
        bundles["Tom"] = random_bundle(*model, "Tom", "<yty>");
        bundles["Tom"].class_noun = "cat";
        request.prompt = "a dog and a cat in a forest";
        request.layout.objects = {{{0.3, 0.5, 0.4, 0.5}, "Dog", "dog"}, {{0.75, 0.5, 0.4, 0.5}, "Cat", "cat"}};
        request.sample = {4, 6.0, 17};
    }
};

}  // namespace

TEST(Compose, NoCharactersIsOnePlainPass) {
    ComposeFixture fx;
    auto r = iterative_compose(*fx.model, fx.schedule, fx.request, fx.bundles);
    ASSERT_EQ(r.passes.size(), 1u);
    EXPECT_EQ(r.passes[0].input_channels, 4);
    EXPECT_EQ(r.passes[0].prompt, "a dog and a cat in a forest");
    EXPECT_EQ(r.image.sizes(), (std::vector<std::int64_t>{3, 16, 16}));
}

TEST(Compose, SingleCharacterIsOnePass) {
    ComposeFixture fx;
    fx.request.characters = {{1, "Tom"}};
    auto r = iterative_compose(*fx.model, fx.schedule, fx.request, fx.bundles);
    ASSERT_EQ(r.passes.size(), 1u);
    EXPECT_EQ(r.passes[0].prompt, "a dog and a <yty> cat in a forest");
    EXPECT_EQ(r.passes[0].character, "Tom");
    EXPECT_FALSE(fx.model->text_encoder->has_token("<yty>"));
}

TEST(Compose, TwoCharactersTwoPassesPreservingOutside) {
    ComposeFixture fx;
    fx.request.characters = {{0, "Rex"}, {1, "Tom"}};
    auto r = iterative_compose(*fx.model, fx.schedule, fx.request, fx.bundles);
    ASSERT_EQ(r.passes.size(), 2u);
    EXPECT_EQ(r.passes[0].prompt, "a <sks> dog and a cat in a forest");
    EXPECT_EQ(r.passes[0].input_channels, 4);
    EXPECT_EQ(r.passes[1].prompt, "<yty> cat");
    EXPECT_EQ(r.passes[1].input_channels, 9);
    EXPECT_EQ(r.passes[1].object_index, 1);
    EXPECT_NE(r.passes[0].seed, r.passes[1].seed);

    const auto& first = r.pass_images[0];
    const auto& box = fx.request.layout.objects[1].bbox;
    double outside_diff = 0, inside_diff = 0;
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            const double cx = (x + 0.5) / 16, cy = (y + 0.5) / 16;
            const bool inside = std::abs(cx - box.x) < box.w / 2 && std::abs(cy - box.y) < box.h / 2;
            const double d = (r.image.select(1, y).select(1, x) - first.select(1, y).select(1, x))
                                 .abs()
                                 .max()
                                 .item<double>();
            (inside ? inside_diff : outside_diff) = std::max(inside ? inside_diff : outside_diff, d);
        }
    }
    EXPECT_LE(outside_diff, 1e-6);
    EXPECT_GT(inside_diff, 0.0);
    EXPECT_TRUE(fx.model->text_encoder->registered_tokens().empty());
}

TEST(Compose, DeterministicForFixedSeed) {
    ComposeFixture fx;
    fx.request.characters = {{0, "Rex"}, {1, "Tom"}};
    auto a = iterative_compose(*fx.model, fx.schedule, fx.request, fx.bundles);
    auto b = iterative_compose(*fx.model, fx.schedule, fx.request, fx.bundles);
    EXPECT_TRUE(torch::equal(a.image, b.image));
}

TEST(Compose, UnregisteredCharacterFailsBeforeSampling) {
    ComposeFixture fx;
    fx.request.characters = {{0, "Rex"}, {1, "Nobody"}};
    int passes = 0;
    EXPECT_THROW(iterative_compose(*fx.model, fx.schedule, fx.request, fx.bundles,
                                   [&](const PassRecord&) { ++passes; }),
                 NotFoundError);
    EXPECT_EQ(passes, 0);
    fx.request.characters = {{5, "Rex"}};
    EXPECT_THROW(iterative_compose(*fx.model, fx.schedule, fx.request, fx.bundles), InvalidRequestError);
}

TEST(Compose, SketchesPerBox) {
    ComposeFixture fx;
    fx.request.sketches = {torch::ones({1, 6, 6}), torch::Tensor()};
    fx.request.sketch_beta = 1.0;
    auto with = iterative_compose(*fx.model, fx.schedule, fx.request, fx.bundles);
    fx.request.sketch_beta = 0.0;
    auto without = iterative_compose(*fx.model, fx.schedule, fx.request, fx.bundles);
    EXPECT_FALSE(torch::equal(with.image, without.image));
    fx.request.sketches = {torch::ones({1, 6, 6})};
    EXPECT_THROW(iterative_compose(*fx.model, fx.schedule, fx.request, fx.bundles), InvalidRequestError);
}

// ---------------------------------------------------------------------------
// Toy data and trainer

TEST(ToyData, ScenesAreDeterministicAndConsistent) {
    auto a = make_toy_scene(42);
    auto b = make_toy_scene(42);
    EXPECT_TRUE(torch::equal(a.image, b.image));
    EXPECT_EQ(a.prompt, b.prompt);
    EXPECT_EQ(a.image.sizes(), (std::vector<std::int64_t>{3, 64, 64}));
    EXPECT_TRUE(layout::validate(a.layout).empty());
    ASSERT_EQ(a.sketches.size(), a.layout.objects.size());
    for (const auto& s : a.sketches) EXPECT_GT(s.sum().item<double>(), 0.0);

    auto set = make_toy_dataset(16, 1);
    std::set<std::string> prompts;
    for (const auto& s : set) {
        prompts.insert(s.prompt);
        EXPECT_TRUE(s.prompt.starts_with("a "));
        for (const auto& o : s.layout.objects) EXPECT_NO_THROW(toy_category(o.phrase));
    }
    EXPECT_GT(prompts.size(), 8u);
}

TEST(ToyData, PromptWording) {
    EXPECT_EQ(toy_prompt({{"dog", {}, {}}, {"cat", {}, {}}}, "forest"), "a dog and a cat in a forest");
    EXPECT_EQ(toy_prompt({{"tent", {}, {}}}, "park"), "a tent in the park");
    EXPECT_THROW(render_toy_scene({{"dragon", {0.5, 0.5, 0.5, 0.5}, {}}}, "forest", 32), NotFoundError);
    EXPECT_THROW(render_toy_scene({}, "moon", 32), NotFoundError);
}

TEST(ToyData, CharacterImagesShareColour) {
    auto imgs = make_character_images("cat", {20, 220, 220}, 5, 3, 32);
    ASSERT_EQ(imgs.size(), 5u);
    auto colour = torch::tensor({20.0f, 220.0f, 220.0f}).div(255.0).view({3, 1, 1});
    for (const auto& img : imgs) {
        auto hits = ((img - colour).abs().amax(0) < 1e-3).sum().item<std::int64_t>();
        EXPECT_GT(hits, 20);
    }
}

TEST(Trainer, DenoiserLossFallsOnTinySet) {
    auto model = make_tiny_model(28);
    DiffusionSchedule schedule;
    ToySceneOptions o;
    o.image_size = 16;
    std::vector<TrainingExample> examples;
    for (const auto& s : make_toy_dataset(4, 5, o)) examples.push_back(make_training_example(*model, s, true, true));
    DenoiserTrainOptions t;
    t.epochs = 30;
    t.batch_size = 4;
    t.lr = 2e-3;
    auto losses = train_denoiser(*model, schedule, examples, t);
    ASSERT_EQ(losses.size(), 30u);
    const double head = (losses[0] + losses[1] + losses[2]) / 3;
    const double tail = (losses[27] + losses[28] + losses[29]) / 3;
    EXPECT_LT(tail, head);
}

TEST(Trainer, StopsOnceRecentLossIsBelowTarget) {
    auto model = make_tiny_model(29);
    DiffusionSchedule schedule;
    ToySceneOptions o;
    o.image_size = 16;
    std::vector<TrainingExample> examples;
    for (const auto& s : make_toy_dataset(2, 6, o)) examples.push_back(make_training_example(*model, s, true, false));
    DenoiserTrainOptions t;
    t.epochs = 40;
    t.batch_size = 2;
    t.stop_below = 1e9;
    t.stop_window = 3;
    EXPECT_EQ(train_denoiser(*model, schedule, examples, t).size(), 3u);
    t.stop_below = 0.0;
    t.epochs = 5;
    t.cosine_decay = true;
    t.high_noise_fraction = 0.5;
    auto losses = train_denoiser(*model, schedule, examples, t);
    ASSERT_EQ(losses.size(), 5u);
    for (double l : losses) EXPECT_TRUE(std::isfinite(l));
}

TEST(Trainer, CodecFitsAndScales) {
    torch::manual_seed(3);
    LatentCodec codec(LatentMode::autoencoder, 32);
    ToySceneOptions o;
    o.image_size = 32;
    std::vector<torch::Tensor> images;
    for (const auto& s : make_toy_dataset(8, 2, o)) images.push_back(s.image);
    const double before = torch::mse_loss(codec->reconstruct(torch::stack(images)), torch::stack(images)).item<double>();
    CodecTrainOptions c;
    c.steps = 60;
    c.batch_size = 8;
    const double after = train_codec(*codec, images, c);
    EXPECT_LT(after, before);
    auto z = codec->encode(torch::stack(images));
    EXPECT_NEAR(z.std().item<double>(), 1.0, 1e-3);
    LatentCodec identity(LatentMode::identity, 32);
    EXPECT_EQ(train_codec(*identity, images, c), 0.0);
}
