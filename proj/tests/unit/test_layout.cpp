#include <gtest/gtest.h>
#include <torch/torch.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "d3pm_oracle.hpp"
#include "talecraft/common/error.hpp"
#include "talecraft/layout/corpus.hpp"
#include "talecraft/layout/denoiser.hpp"
#include "talecraft/layout/layout.hpp"
#include "talecraft/layout/lexicon.hpp"
#include "talecraft/layout/sampler.hpp"
#include "talecraft/layout/schedule.hpp"
#include "talecraft/layout/text_to_layout.hpp"

using namespace talecraft;
using namespace talecraft::layout;

namespace {

Layout random_layout(std::mt19937_64& rng, int m_bins, int n_max, int n_categories) {
    std::uniform_int_distribution<int> n_dist(0, n_max);
    std::uniform_int_distribution<int> bin(1, m_bins);
    std::uniform_int_distribution<int> cat(1, n_categories);
    Layout layout;
    const int n = n_dist(rng);
    for (int i = 0; i < n; ++i) {
        layout.objects.push_back({{bin(rng), bin(rng), bin(rng), bin(rng)}, cat(rng), std::nullopt});
    }
    return layout;
}

LayoutVocab small_vocab() { return LayoutVocab{8, 5}; }

}  // namespace

TEST(Quantize, Examples) {
    EXPECT_EQ(quantize(0.0, 64), 1);
    EXPECT_EQ(quantize(0.5, 64), 33);
    EXPECT_EQ(quantize(1.0, 64), 64);
    EXPECT_EQ(quantize(-0.3, 64), 1);
    EXPECT_EQ(quantize(1.7, 64), 64);
    EXPECT_DOUBLE_EQ(dequantize(33, 64), 32.5 / 64.0);
}

TEST(Quantize, DequantizeLandsInOwnBin) {
    for (int m : {4, 16, 64}) {
        for (int b = 1; b <= m; ++b) EXPECT_EQ(quantize(dequantize(b, m), m), b);
    }
}

TEST(Flatten, TwoObjectsPadded) {
    LayoutVocab vocab;
    Layout layout;
    layout.objects.push_back({{10, 20, 5, 6}, 3, std::nullopt});
    layout.objects.push_back({{1, 64, 64, 1}, 365, std::nullopt});
    auto seq = flatten(layout, vocab, 16);
    ASSERT_EQ(seq.tokens.size(), 80u);
    EXPECT_EQ(seq.tokens[0], vocab.geometry_token(10));
    EXPECT_EQ(seq.tokens[4], vocab.category_token(3));
    EXPECT_EQ(seq.tokens[9], vocab.category_token(365));
    for (std::size_t i = 10; i < 80; ++i) EXPECT_EQ(seq.tokens[i], vocab.pad());
    EXPECT_EQ(unflatten(seq, vocab), layout);
}

TEST(Flatten, EmptyLayoutIsAllPad) {
    LayoutVocab vocab;
    auto seq = flatten(Layout{}, vocab, 16);
    ASSERT_EQ(seq.tokens.size(), 80u);
    for (auto t : seq.tokens) EXPECT_EQ(t, vocab.pad());
    EXPECT_TRUE(unflatten(seq, vocab).objects.empty());
}

TEST(Flatten, RoundTripRandomLayouts) {
    std::mt19937_64 rng(11);
    LayoutVocab vocab;
    for (int i = 0; i < 1000; ++i) {
        auto layout = random_layout(rng, 64, 16, 365);
        ASSERT_EQ(unflatten(flatten(layout, vocab, 16), vocab), layout);
    }
}

TEST(Flatten, OverCapacityThrows) {
    Layout layout;
    layout.objects.resize(3);
    EXPECT_THROW(flatten(layout, LayoutVocab{}, 2), CapacityError);
}

TEST(Unflatten, WrongRangeNamesPosition) {
    LayoutVocab vocab;
    Layout layout;
    layout.objects.push_back({{1, 2, 3, 4}, 5, std::nullopt});
    auto seq = flatten(layout, vocab, 2);
    seq.tokens[2] = vocab.category_token(1);
    try {
        unflatten(seq, vocab);
        FAIL() << "expected DecodeError";
    } catch (const DecodeError& e) {
        EXPECT_EQ(e.position(), 2u);
    }
    seq = flatten(layout, vocab, 2);
    seq.tokens[4] = vocab.geometry_token(1);
    EXPECT_THROW(unflatten(seq, vocab), DecodeError);
    seq = flatten(layout, vocab, 2);
    seq.tokens[7] = vocab.geometry_token(3);  // geometry inside a padded group
    EXPECT_THROW(unflatten(seq, vocab), DecodeError);
    seq = flatten(layout, vocab, 2);
    seq.tokens[1] = vocab.mask();
    EXPECT_THROW(unflatten(seq, vocab), DecodeError);
}

TEST(Vocab, DisjointRanges) {
    LayoutVocab vocab;
    EXPECT_EQ(vocab.size(), 64 + 365 + 2);
    for (std::int64_t t = 0; t < vocab.size(); ++t) {
        int kinds = vocab.is_geometry(t) + vocab.is_category(t) + (t == vocab.pad()) + (t == vocab.mask());
        EXPECT_EQ(kinds, 1) << t;
    }
    EXPECT_EQ(vocab.bin_of(vocab.geometry_token(64)), 64);
    EXPECT_EQ(vocab.category_of(vocab.category_token(365)), 365);
}

TEST(Schedule, RowsStochastic) {
    for (auto mode : {CorruptionMode::absorbing, CorruptionMode::uniform}) {
        auto s = build_schedule(50, mode, LayoutVocab{});
        for (int t = 0; t <= 50; ++t) {
            EXPECT_LT((s.step(t).sum(1) - 1).abs().max().item<double>(), 1e-9);
            EXPECT_LT((s.cumulative(t).sum(1) - 1).abs().max().item<double>(), 1e-9);
        }
    }
}

TEST(Schedule, CumulativeIsProductOfSteps) {
    auto s = build_schedule(6, CorruptionMode::uniform, small_vocab());
    auto prod = torch::eye(s.vocab_size(), torch::kFloat64);
    for (int t = 1; t <= 6; ++t) {
        prod = prod.matmul(s.step(t));
        EXPECT_TRUE(torch::allclose(prod, s.cumulative(t), 0, 1e-12));
    }
}

TEST(Schedule, FinalStepFullyCorrupted) {
    auto vocab = small_vocab();
    auto absorbing = build_schedule(10, CorruptionMode::absorbing, vocab).cumulative(10);
    auto uniform = build_schedule(10, CorruptionMode::uniform, vocab).cumulative(10);
    const auto d = vocab.size();
    for (std::int64_t i = 0; i < d; ++i) {
        if (i == vocab.pad()) {
            EXPECT_DOUBLE_EQ(absorbing[i][i].item<double>(), 1.0);
            EXPECT_DOUBLE_EQ(uniform[i][i].item<double>(), 1.0);
            continue;
        }
        EXPECT_NEAR(absorbing[i][vocab.mask()].item<double>(), 1.0, 1e-12);
        for (std::int64_t j = 0; j < d; ++j) {
            double expect = j == vocab.pad() ? 0.0 : 1.0 / static_cast<double>(d - 1);
            EXPECT_NEAR(uniform[i][j].item<double>(), expect, 1e-12);
        }
    }
}

TEST(Schedule, UnknownModeAndBadMatrices) {
    EXPECT_THROW(parse_corruption_mode("gaussian"), ConfigError);
    EXPECT_THROW(build_schedule(0, CorruptionMode::absorbing, small_vocab()), ConfigError);
    EXPECT_THROW(NoiseSchedule({torch::full({2, 2}, 0.6, torch::kFloat64)}), ConfigError);
    auto neg = torch::tensor({{1.5, -0.5}, {0.0, 1.0}}, torch::kFloat64);
    EXPECT_THROW(NoiseSchedule({neg}), ConfigError);
}

TEST(ForwardCorrupt, IdentityAndAbsorbingLimits) {
    auto vocab = small_vocab();
    auto s = build_schedule(5, CorruptionMode::absorbing, vocab);
    auto rng = make_generator(3);
    auto z0 = torch::tensor({0L, 3L, 9L, vocab.pad(), 12L}, torch::kLong);
    EXPECT_TRUE(torch::equal(forward_corrupt(z0, 0, s, rng), z0));
    auto zT = forward_corrupt(z0, 5, s, rng);
    auto expect = torch::tensor({vocab.mask(), vocab.mask(), vocab.mask(), vocab.pad(), vocab.mask()}, torch::kLong);
    EXPECT_TRUE(torch::equal(zT, expect));
}

TEST(ForwardCorrupt, PadStaysPad) {
    auto vocab = small_vocab();
    auto s = build_schedule(5, CorruptionMode::uniform, vocab);
    auto rng = make_generator(5);
    auto z0 = torch::full({200}, vocab.pad(), torch::kLong);
    for (int t = 1; t <= 5; ++t) EXPECT_TRUE(torch::equal(forward_corrupt(z0, t, s, rng), z0));
}

TEST(ForwardCorrupt, MonteCarloMarginalWithinThreeSigma) {
    auto vocab = small_vocab();
    auto s = build_schedule(4, CorruptionMode::uniform, vocab);
    auto rng = make_generator(17);
    const std::int64_t n = 100000;
    const int t = 2;
    const std::int64_t source = 3;
    auto z = forward_corrupt(torch::full({n}, source, torch::kLong), t, s, rng);
    auto counts = torch::bincount(z, {}, vocab.size()).to(torch::kFloat64);
    auto row = s.cumulative(t)[source];
    for (std::int64_t j = 0; j < vocab.size(); ++j) {
        double p = row[j].item<double>();
        double sigma = std::sqrt(n * p * (1 - p));
        EXPECT_LE(std::abs(counts[j].item<double>() - n * p), 3 * sigma + 1e-9) << "token " << j;
    }
}

TEST(ForwardCorrupt, PerRowSteps) {
    auto vocab = small_vocab();
    auto s = build_schedule(3, CorruptionMode::absorbing, vocab);
    auto rng = make_generator(1);
    auto z0 = torch::tensor({{1L, 2L}, {3L, 4L}});
    auto out = forward_corrupt(z0, torch::tensor({0L, 3L}), s, rng);
    EXPECT_TRUE(torch::equal(out[0], z0[0]));
    EXPECT_TRUE(torch::equal(out[1], torch::full({2}, vocab.mask(), torch::kLong)));
}

TEST(Posterior, MatchesPathEnumerationSmallCase) {
    // D = 4, T = 2, every z_t and every t.
    std::mt19937_64 rng(2);
    std::vector<oracle::Matrix> steps{oracle::random_stochastic(4, rng), oracle::random_stochastic(4, rng)};
    NoiseSchedule s({oracle::to_tensor(steps[0]), oracle::to_tensor(steps[1])});
    oracle::PathEnumerator paths(steps);
    auto p0 = oracle::random_distribution(4, rng);
    auto probs = torch::tensor(p0, torch::kFloat64).reshape({1, 4});
    for (int t = 1; t <= 2; ++t) {
        for (std::int64_t zt = 0; zt < 4; ++zt) {
            auto post = posterior_step(torch::tensor({zt}), probs, t, s);
            auto ref = paths.model_posterior(p0, t, static_cast<int>(zt));
            for (int k = 0; k < 4; ++k) EXPECT_NEAR(post[0][k].item<double>(), ref[static_cast<std::size_t>(k)], 1e-10);
        }
    }
}

TEST(Posterior, SweepAgainstEnumeration) {
    auto report = oracle::run_d3pm_oracle_sweep(1234, 2);
    EXPECT_GT(report.cases, 100u);
    EXPECT_LT(report.max_posterior_err, 1e-10);
    EXPECT_LT(report.max_loss_err, 1e-8);
}

TEST(Posterior, FirstStepRenormalizesOnSupport) {
    auto a = torch::tensor({{0.5, 0.5, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.2, 0.8}}, torch::kFloat64);
    NoiseSchedule s({a});
    auto probs = torch::tensor({{0.2, 0.3, 0.5}}, torch::kFloat64);
    // z1 = 0 only reachable from z0 = 0.
    auto p = posterior_step(torch::tensor({0L}), probs, 1, s);
    EXPECT_TRUE(torch::allclose(p, torch::tensor({{1.0, 0.0, 0.0}}, torch::kFloat64)));
    // z1 = 1 reachable from all three.
    p = posterior_step(torch::tensor({1L}), probs, 1, s);
    EXPECT_TRUE(torch::allclose(p, probs, 0, 1e-15));
    // z1 = 2 reachable from z0 = 2 only.
    p = posterior_step(torch::tensor({2L}), probs, 1, s);
    EXPECT_TRUE(torch::allclose(p, torch::tensor({{0.0, 0.0, 1.0}}, torch::kFloat64)));
}

TEST(Posterior, OneHotIdentityIsOneHot) {
    auto eye = torch::eye(4, torch::kFloat64);
    NoiseSchedule s({eye, eye});
    auto probs = torch::one_hot(torch::tensor({2L}), 4).to(torch::kFloat64);
    auto p = posterior_step(torch::tensor({2L}), probs, 2, s);
    EXPECT_TRUE(torch::equal(p, probs));
}

TEST(Posterior, ZeroNormalizerThrows) {
    auto eye = torch::eye(3, torch::kFloat64);
    NoiseSchedule s({eye});
    // All model mass on z0 = 0, but z1 = 1 is unreachable from 0.
    auto probs = torch::tensor({{1.0, 0.0, 0.0}}, torch::kFloat64);
    EXPECT_THROW(posterior_step(torch::tensor({1L}), probs, 1, s), NumericalError);
}

TEST(Posterior, BatchedMatchesScalar) {
    auto s = build_schedule(4, CorruptionMode::uniform, small_vocab());
    auto rng = make_generator(9);
    auto d = s.vocab_size();
    auto probs = torch::softmax(torch::randn({3, 5, d}, rng, torch::kFloat64), -1);
    auto zt = torch::randint(0, d - 2, {3, 5}, rng, torch::kLong);
    auto t = torch::tensor({1L, 3L, 4L});
    auto batched = posterior_step(zt, probs, t, s);
    for (int b = 0; b < 3; ++b) {
        auto single = posterior_step(zt[b], probs[b], static_cast<int>(t[b].item<std::int64_t>()), s);
        EXPECT_TRUE(torch::allclose(batched[b], single, 0, 1e-14));
    }
}

TEST(Loss, ExactDenoiserIdentityScheduleIsZero) {
    auto eye = torch::eye(5, torch::kFloat64);
    NoiseSchedule s({eye, eye});
    auto z0 = torch::tensor({{0L, 3L, 4L}});
    auto probs = torch::one_hot(z0, 5).to(torch::kFloat64);
    for (std::int64_t t : {1L, 2L}) {
        auto terms = hybrid_loss(z0, z0, torch::tensor({t}), probs, s, 0.1, 4);
        EXPECT_NEAR(terms.total.item<double>(), 0.0, 1e-12);
    }
}

TEST(Loss, LambdaZeroIsVbAlone) {
    auto s = build_schedule(3, CorruptionMode::absorbing, small_vocab());
    auto rng = make_generator(4);
    auto d = s.vocab_size();
    auto z0 = torch::randint(0, 8, {2, 5}, rng, torch::kLong);
    auto t = torch::tensor({2L, 3L});
    auto zt = forward_corrupt(z0, t, s, rng);
    auto probs = torch::softmax(torch::randn({2, 5, d}, rng, torch::kFloat64), -1);
    auto terms = hybrid_loss(z0, zt, t, probs, s, 0.0, small_vocab().pad());
    EXPECT_EQ(terms.total.item<double>(), terms.vb.item<double>());
}

TEST(Loss, SmallFixedCaseMatchesEnumeration) {
    std::mt19937_64 rng(77);
    std::vector<oracle::Matrix> steps{oracle::random_stochastic(4, rng, 0.0), oracle::random_stochastic(4, rng, 0.0)};
    NoiseSchedule s({oracle::to_tensor(steps[0]), oracle::to_tensor(steps[1])});
    oracle::PathEnumerator paths(steps);
    auto p0 = oracle::random_distribution(4, rng);
    auto p1 = oracle::random_distribution(4, rng);
    auto probs = torch::stack({torch::tensor(p0, torch::kFloat64), torch::tensor(p1, torch::kFloat64)}).unsqueeze(0);
    auto z0 = torch::tensor({{1L, 3L}});
    auto zt = torch::tensor({{2L, 0L}});
    double vb_a = 0, vb_b = 0, ce_a = 0, ce_b = 0;
    paths.position_loss(1, 2, 2, p0, 0.1, &vb_a, &ce_a);
    paths.position_loss(3, 2, 0, p1, 0.1, &vb_b, &ce_b);
    auto terms = hybrid_loss(z0, zt, torch::tensor({2L}), probs, s, 0.1, -1);
    EXPECT_NEAR(terms.vb.item<double>(), (vb_a + vb_b) / 2, 1e-8);
    EXPECT_NEAR(terms.ce.item<double>(), (ce_a + ce_b) / 2, 1e-8);
    EXPECT_NEAR(terms.total.item<double>(), (vb_a + vb_b) / 2 + 0.1 * (ce_a + ce_b) / 2, 1e-8);
}

TEST(Loss, PadPositionsIgnored) {
    auto vocab = small_vocab();
    auto s = build_schedule(3, CorruptionMode::absorbing, vocab);
    auto rng = make_generator(8);
    auto d = s.vocab_size();
    auto z0 = torch::tensor({{1L, 2L, vocab.pad()}});
    auto zt = forward_corrupt(z0, 2, s, rng);
    auto probs = torch::softmax(torch::randn({1, 3, d}, rng, torch::kFloat64), -1);
    auto full = hybrid_loss(z0, zt, torch::tensor({2L}), probs, s, 0.1, vocab.pad());
    auto trimmed = hybrid_loss(z0.slice(1, 0, 2), zt.slice(1, 0, 2), torch::tensor({2L}), probs.slice(1, 0, 2), s, 0.1,
                               vocab.pad());
    EXPECT_NEAR(full.total.item<double>(), trimmed.total.item<double>(), 1e-12);
}

class TinyDenoiser : public ::testing::Test {
protected:
    void SetUp() override {
        torch::manual_seed(0);
        LayoutDenoiserOptions o;
        o.vocab = LayoutVocab{16, 365};
        o.n_max = 4;
        o.timesteps = 8;
        o.width = 32;
        o.layers = 1;
        o.heads = 2;
        model = LayoutDenoiser(o);
        model->eval();
        schedule = std::make_unique<NoiseSchedule>(build_schedule(8, CorruptionMode::absorbing, o.vocab));
    }
    LayoutDenoiser model{nullptr};
    std::unique_ptr<NoiseSchedule> schedule;
};

TEST_F(TinyDenoiser, ProbsAreLegalDistributions) {
    const auto& vocab = model->options().vocab;
    auto rng = make_generator(3);
    auto tokens = torch::randint(0, vocab.size(), {2, 20}, rng, torch::kLong);
    tokens.index_put_({0, torch::indexing::Slice(15, 20)}, vocab.pad());
    auto p = model->probs(tokens, torch::tensor({1L, 8L}));
    EXPECT_LT((p.sum(-1) - 1).abs().max().item<double>(), 1e-9);
    EXPECT_GE(p.min().item<double>(), 0.0);
    for (std::int64_t i = 0; i < 15; ++i) {
        auto row = p[1][i];
        const bool category_field = i % 5 == 4;
        auto geo = row.slice(0, 0, vocab.m_bins).sum().item<double>();
        auto cat = row.slice(0, vocab.m_bins, vocab.m_bins + vocab.n_categories).sum().item<double>();
        EXPECT_NEAR(category_field ? cat : geo, 1.0, 1e-9);
    }
    for (std::int64_t i = 15; i < 20; ++i) EXPECT_DOUBLE_EQ(p[0][i][vocab.pad()].item<double>(), 1.0);
}

TEST_F(TinyDenoiser, SamplingClampsCategoriesAndIsDeterministic) {
    const int dog = category_id("Dog");
    const int cat = category_id("Cat");
    ASSERT_GT(dog, 0);
    ASSERT_GT(cat, 0);
    auto rng_a = make_generator(42);
    auto rng_b = make_generator(42);
    auto a = sample_layout({dog, cat}, model, *schedule, rng_a);
    auto b = sample_layout({dog, cat}, model, *schedule, rng_b);
    ASSERT_EQ(a.objects.size(), 2u);
    EXPECT_EQ(a.objects[0].category, dog);
    EXPECT_EQ(a.objects[1].category, cat);
    EXPECT_EQ(a, b);
    for (const auto& o : a.objects) {
        for (int v : {o.box.x, o.box.y, o.box.w, o.box.h}) {
            EXPECT_GE(v, 1);
            EXPECT_LE(v, 16);
        }
    }
}

TEST_F(TinyDenoiser, EmptyConditionAndCapacity) {
    auto rng = make_generator(1);
    EXPECT_TRUE(sample_layout({}, model, *schedule, rng).objects.empty());
    EXPECT_THROW(sample_layout({1, 2, 3, 4, 5}, model, *schedule, rng), CapacityError);
}

TEST_F(TinyDenoiser, ShortTrainingReducesLoss) {
    auto corpus = synthetic_corpus(64, 16, 4, 5);
    LayoutTrainOptions o;
    o.epochs = 6;
    o.batch_size = 16;
    o.lr = 2e-3;
    auto losses = train_layout_denoiser(model, corpus, *schedule, o);
    ASSERT_EQ(losses.size(), 6u);
    EXPECT_LT(losses.back(), losses.front());
}

TEST(SyntheticCorpus, DeterministicAndContained) {
    auto a = synthetic_corpus(100, 64, 6, 3);
    auto b = synthetic_corpus(100, 64, 6, 3);
    EXPECT_EQ(a, b);
    for (const auto& l : a) {
        EXPECT_FALSE(l.objects.empty());
        EXPECT_LE(l.objects.size(), 6u);
        EXPECT_TRUE(is_valid_layout(l, 64));
        EXPECT_TRUE(is_contained_layout(l, 64));
    }
}

TEST(Validity, Checks) {
    Layout ok;
    ok.objects.push_back({{32, 32, 10, 10}, 1, std::nullopt});
    EXPECT_TRUE(is_valid_layout(ok, 64));
    EXPECT_TRUE(is_contained_layout(ok, 64));
    Layout spill;
    spill.objects.push_back({{2, 32, 30, 10}, 1, std::nullopt});
    EXPECT_TRUE(is_valid_layout(spill, 64));
    EXPECT_FALSE(is_contained_layout(spill, 64));
}

TEST(Object365Subset, ReadsAnnotationFiles) {
    auto dir = std::filesystem::temp_directory_path() / "talecraft_o365_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    nlohmann::json j = {{"width", 200},
                        {"height", 100},
                        {"annotations",
                         {{{"category_id", 3}, {"bbox", {0, 0, 100, 50}}},
                          {{"category_id", 7}, {"bbox", {150, 50, 50, 50}}}}}};
    std::ofstream(dir / "a.json") << j.dump();
    auto layouts = load_object365_subset(dir, 64, 16);
    ASSERT_EQ(layouts.size(), 1u);
    ASSERT_EQ(layouts[0].objects.size(), 2u);
    const auto& first = layouts[0].objects[0];
    EXPECT_EQ(first.category, 3);
    EXPECT_EQ(first.box.x, quantize(0.25, 64));
    EXPECT_EQ(first.box.y, quantize(0.25, 64));
    EXPECT_EQ(first.box.w, quantize(0.5, 64));
    std::filesystem::remove_all(dir);
}

TEST(Lexicon, Classes) {
    const auto& classes = object365_classes();
    EXPECT_EQ(classes.size(), 365u);
    EXPECT_EQ(category_id("Person"), 1);
    EXPECT_EQ(category_id("Not A Class"), 0);
}

TEST(Lexicon, Singular) {
    EXPECT_EQ(singular("dogs"), "dog");
    EXPECT_EQ(singular("Puppies"), "puppy");
    EXPECT_EQ(singular("knives"), "knife");
    EXPECT_EQ(singular("boxes"), "box");
    EXPECT_EQ(singular("children"), "child");
    EXPECT_EQ(singular("grass"), "grass");
}

TEST(ExtractCategories, DogCatForest) {
    auto lex = Lexicon::builtin();
    auto r = extract_categories("a dog and a cat in a forest", lex);
    ASSERT_EQ(r.categories.size(), 2u);
    EXPECT_EQ(r.categories[0].name, "Dog");
    EXPECT_EQ(r.categories[1].name, "Cat");
    EXPECT_EQ(r.unmapped, std::vector<std::string>{"forest"});
}

TEST(ExtractCategories, DuplicatesAndMultiplicity) {
    auto lex = Lexicon::builtin();
    auto r = extract_categories("two dogs", lex);
    ASSERT_EQ(r.categories.size(), 1u);
    EXPECT_EQ(r.categories[0].name, "Dog");
    auto multi = extract_categories("two dogs and a dog", lex, true);
    EXPECT_EQ(multi.categories.size(), 3u);
}

TEST(ExtractCategories, NoKnownNounsWarns) {
    auto r = extract_categories("a wonderful day", Lexicon::builtin());
    EXPECT_TRUE(r.categories.empty());
    EXPECT_FALSE(r.warnings.empty());
}

TEST(ExtractCategories, TokensAndStyleSuffixIgnored) {
    auto r = extract_categories("a <sks> dog and a cat in a forest in oil painting style", Lexicon::builtin());
    ASSERT_EQ(r.categories.size(), 2u);
    EXPECT_EQ(r.categories[0].name, "Dog");
}

TEST(SceneLayout, JsonRoundTripAndValidation) {
    SceneLayout s;
    s.objects.push_back({{0.3, 0.4, 0.2, 0.3}, "Dog", "<sks> dog"});
    auto j = to_json(s);
    EXPECT_EQ(j["canvas"][0], 512);
    EXPECT_EQ(scene_layout_from_json(j), s);
    EXPECT_TRUE(validate(s).empty());
    s.objects.push_back({{0.95, 0.5, 0.3, 0.1}, "Cat", "cat"});
    auto issues = validate(s);
    ASSERT_EQ(issues.size(), 1u);
    EXPECT_NE(issues[0].find("1"), std::string::npos);
}

TEST(SceneLayout, QuantizedConversion) {
    SceneLayout s;
    s.objects.push_back({{0.5, 0.5, 0.25, 0.25}, "Dog", "dog"});
    auto l = from_scene_layout(s, 64, object365_classes());
    ASSERT_EQ(l.objects.size(), 1u);
    EXPECT_EQ(l.objects[0].box.x, 33);
    EXPECT_EQ(l.objects[0].category, category_id("Dog"));
    s.objects[0].category = "Dragon";
    EXPECT_THROW(from_scene_layout(s, 64, object365_classes()), ValidationError);
}

TEST(TextToLayoutFacade, GeneratesConditionedLayout) {
    TextToLayoutOptions o;
    o.denoiser.n_max = 4;
    o.denoiser.timesteps = 6;
    o.denoiser.width = 32;
    o.denoiser.layers = 1;
    o.denoiser.heads = 2;
    TextToLayout t2l(o, 1);
    auto a = t2l.generate("a dog and a cat in a forest", 5);
    auto b = t2l.generate("a dog and a cat in a forest", 5);
    ASSERT_EQ(a.layout.objects.size(), 2u);
    EXPECT_EQ(a.layout.objects[0].category, "Dog");
    EXPECT_EQ(a.layout.objects[0].phrase, "dog");
    EXPECT_EQ(a.layout, b.layout);
    EXPECT_TRUE(validate(a.layout).empty());
    auto none = t2l.generate("a wonderful day", 5);
    EXPECT_TRUE(none.layout.objects.empty());
    EXPECT_FALSE(none.extraction.warnings.empty());
}
