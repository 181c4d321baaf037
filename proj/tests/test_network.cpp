#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "imlsp/checkpoint.hpp"
#include "imlsp/metrics.hpp"
#include "imlsp/network.hpp"
#include "imlsp/optimizer.hpp"
#include "imlsp/synthetic.hpp"
#include "imlsp/training.hpp"

using namespace imlsp;
namespace fs = std::filesystem;

namespace {

EncoderConfig toy_config() {
    EncoderConfig cfg;
    cfg.conv_layers = {{2}, {4}};
    cfg.fused_width = 8;
    cfg.input_extents = {4, 4, 4};
    cfg.k_intervals = 4;
    cfg.seed = 5;
    return cfg;
}

Tensor random_volume(const EncoderConfig& cfg, Rng& rng) {
    Tensor vol({2, cfg.input_extents[0], cfg.input_extents[1], cfg.input_extents[2]});
    const std::size_t spatial = vol.size() / 2;
    for (std::size_t i = 0; i < spatial; ++i) vol[i] = rng.uniform(-1.0, 1.0);
    for (std::size_t i = spatial; i < vol.size(); ++i)
        vol[i] = rng.uniform() < 0.2 ? 1.0 : 0.0;
    return vol;
}

std::vector<double> random_clinical(std::size_t width, Rng& rng) {
    std::vector<double> c(width);
    for (auto& v : c) v = rng.normal();
    return c;
}

}  // namespace

TEST_CASE("untrained model predicts the uniform pmf") {
    ImlspModel model(toy_config());
    Rng rng(1);
    const auto vol = random_volume(model.config(), rng);
    const auto clin = random_clinical(model.config().clinical_width, rng);
    auto result = forward(model, vol, clin);
    REQUIRE(result.curves.size() == 4);
    for (const auto& curve : result.curves)
        for (double p : curve.pmf)
            CHECK(p == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("forward is deterministic and shape-checked") {
    ImlspModel model(toy_config());
    Rng rng(2);
    const auto vol = random_volume(model.config(), rng);
    const auto clin = random_clinical(model.config().clinical_width, rng);

    // Perturb parameters away from the uniform anchor.
    for (auto& [name, p] : model.named_parameters()) {
        Rng prng(7);
        for (auto& v : p->value.values()) v += prng.uniform(-0.3, 0.3);
    }

    auto a = forward(model, vol, clin);
    auto b = forward(model, vol, clin);
    for (std::size_t s = 0; s < 4; ++s)
        CHECK(a.curves[s].pmf == b.curves[s].pmf);

    Tensor bad({2, 3, 3, 3});
    CHECK_THROWS_AS(forward(model, bad, clin), ConfigError);
    CHECK_THROWS_AS(forward(model, vol, std::vector<double>(5, 0.0)), ConfigError);
}

TEST_CASE("permuting clinical features with matching fc rows is a no-op") {
    ImlspModel model(toy_config());
    Rng rng(3);
    for (auto& [name, p] : model.named_parameters()) {
        Rng prng(11);
        for (auto& v : p->value.values()) v += prng.uniform(-0.4, 0.4);
    }
    const auto vol = random_volume(model.config(), rng);
    const auto clin = random_clinical(model.config().clinical_width, rng);

    // Reverse the clinical features and the corresponding fc weight rows.
    ImlspModel twin = model;
    const std::size_t w = model.config().clinical_width;
    std::vector<double> permuted(clin.rbegin(), clin.rend());
    for (std::size_t i = 0; i < w; ++i)
        for (std::size_t j = 0; j < model.config().fused_width; ++j)
            twin.fc_weights().value.at2(i, j) =
                model.fc_weights().value.at2(w - 1 - i, j);

    auto base = forward(model, vol, clin);
    auto swapped = forward(twin, vol, permuted);
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t k = 0; k < base.curves[s].pmf.size(); ++k)
            CHECK(swapped.curves[s].pmf[k] ==
                  Catch::Approx(base.curves[s].pmf[k]).margin(1e-12));
}

TEST_CASE("adamw updates") {
    SECTION("zero gradient and zero decay leave parameters unchanged") {
        Parameter p(Tensor({3}, {1.0, -2.0, 0.5}));
        AdamW opt({&p}, {0.1, 0.9, 0.999, 1e-8, 0.0});
        opt.step();
        CHECK(p.value.values() == std::vector<double>{1.0, -2.0, 0.5});
    }

    SECTION("decay-only step shrinks the parameter") {
        Parameter p(Tensor({1}, {1.0}));
        AdamW opt({&p}, {0.1, 0.9, 0.999, 1e-8, 0.01});
        opt.step();
        CHECK(p.value[0] == Catch::Approx(0.999).margin(1e-15));
    }

    SECTION("constant gradient drives the parameter against its sign") {
        Parameter p(Tensor({1}, {0.0}));
        AdamW opt({&p}, {0.01, 0.9, 0.999, 1e-8, 0.0});
        for (int step = 0; step < 100; ++step) {
            p.reset_grad();
            p.grad[0] = 2.5;  // constant positive gradient
            opt.step();
        }
        // 100 steps of magnitude ~lr each
        CHECK(p.value[0] < -0.9);
        CHECK(p.value[0] > -1.1);
    }
}

TEST_CASE("end-to-end loss gradient matches finite differences") {
    ImlspModel model(toy_config());
    model.grid.emplace(std::vector<double>{0.8, 1.7, 3.1});
    Rng rng(13);
    // Nudge all parameters off their zero anchors so the check is not
    // trivially linear.
    for (auto& [name, p] : model.named_parameters()) {
        Rng prng(29);
        for (auto& v : p->value.values()) v += prng.uniform(-0.2, 0.2);
    }

    std::vector<PreparedSample> samples;
    for (int j = 0; j < 3; ++j) {
        PreparedSample s;
        s.id = "s" + std::to_string(j);
        s.volume = random_volume(model.config(), rng);
        s.clinical = random_clinical(model.config().clinical_width, rng);
        for (std::size_t l = 0; l < 4; ++l)
            s.targets.push_back(encode_event(
                *model.grid, {l, rng.uniform(0.2, 5.0), rng.uniform() < 0.5}));
        samples.push_back(std::move(s));
    }
    const std::array<double, 4> lambda = {1.0, 0.8, 1.2, 1.0};
    const double beta = 0.7;

    Tape tape;
    std::vector<ForwardNodes> nodes;
    std::vector<const PreparedSample*> ptrs;
    for (const auto& s : samples) {
        nodes.push_back(append_forward(tape, model, s.volume, s.clinical));
        ptrs.push_back(&s);
    }
    const auto loss_node = append_batch_loss(tape, model, nodes, ptrs, lambda, beta);
    model.reset_gradients();
    tape.backward(loss_node);

    const auto pure_loss = [&]() {
        return evaluate_loss(model, samples, lambda, beta);
    };
    CHECK(pure_loss() == Catch::Approx(tape.value(loss_node)[0]).margin(1e-12));

    std::vector<Parameter*> params;
    for (auto& [name, p] : model.named_parameters()) params.push_back(p);
    CHECK(grad_check_params(pure_loss, params) <= 1e-5);
}

TEST_CASE("lambda masking isolates label heads") {
    ImlspModel model(toy_config());
    model.grid.emplace(std::vector<double>{1.0, 2.0, 3.0});
    Rng rng(17);
    for (std::size_t s = 0; s < 4; ++s) {
        for (auto& v : model.mtlr_theta()[s].value.values())
            v = rng.uniform(-0.5, 0.5);
    }

    PreparedSample sample;
    sample.id = "x";
    sample.volume = random_volume(model.config(), rng);
    sample.clinical = random_clinical(model.config().clinical_width, rng);
    for (std::size_t l = 0; l < 4; ++l)
        sample.targets.push_back(TargetSequence::exact(1 + l % 4, 4));

    const std::array<double, 4> lambda = {1.0, 0.0, 0.0, 0.0};
    const double beta = 1.0;
    Tape tape;
    std::vector<ForwardNodes> nodes = {
        append_forward(tape, model, sample.volume, sample.clinical)};
    std::vector<const PreparedSample*> ptrs = {&sample};
    model.reset_gradients();
    tape.backward(append_batch_loss(tape, model, nodes, ptrs, lambda, beta));

    // Masked heads see exactly the regularizer gradient beta * theta.
    for (std::size_t s = 1; s < 4; ++s) {
        for (std::size_t i = 0; i < model.mtlr_theta()[s].value.size(); ++i)
            CHECK(model.mtlr_theta()[s].grad[i] ==
                  beta * model.mtlr_theta()[s].value[i]);
        for (std::size_t i = 0; i < model.mtlr_bias()[s].grad.size(); ++i)
            CHECK(model.mtlr_bias()[s].grad[i] == 0.0);
    }
    // The active head's gradient differs from the bare regularizer.
    bool differs = false;
    for (std::size_t i = 0; i < model.mtlr_theta()[0].value.size(); ++i)
        differs = differs || model.mtlr_theta()[0].grad[i] !=
                                 beta * model.mtlr_theta()[0].value[i];
    CHECK(differs);
}

namespace {

// Clinical-only cohort with a steep age-driven hazard: fast to train and
// nearly separable by the true risk.
SyntheticCohort separable_cohort(std::uint64_t seed, std::size_t n) {
    SyntheticConfig cfg;
    cfg.n_patients = n;
    cfg.seed = seed;
    cfg.vol_extents = {6, 6, 4};
    cfg.clinical_weight = 12.0;
    cfg.image_weight = 0.0;
    cfg.label_noise_sd = 0.0;
    cfg.censoring_max_years = 0.0;
    return generate_synthetic_cohort(cfg);
}

struct FittedModel {
    ImlspModel model;
    TrainResult result;
    std::vector<PreparedSample> train, validation;
};

FittedModel fit_clinical_only(const SyntheticCohort& synth, TrainConfig tcfg) {
    EncoderConfig ecfg;
    ecfg.conv_layers = {{2}, {4}};
    ecfg.fused_width = 12;
    ecfg.input_extents = {6, 6, 4};
    ecfg.k_intervals = 6;
    ecfg.seed = tcfg.seed;
    FittedModel fitted{ImlspModel(ecfg), {}, {}, {}};
    fitted.model.modality = Modality::kClinicalOnly;

    const auto train_patients = synth.cohort.in_split("train");
    const auto val_patients = synth.cohort.in_split("validation");
    std::vector<ClinicalRecord> train_clinical;
    for (const auto* p : train_patients) train_clinical.push_back(p->clinical);
    fitted.model.stats = fit_normalization(train_clinical);
    fitted.model.grid.emplace(
        build_time_grid(pooled_event_times(train_patients), ecfg.k_intervals));

    fitted.train = prepare_samples(train_patients, fitted.model);
    fitted.validation = prepare_samples(val_patients, fitted.model);
    fitted.result = train(fitted.model, fitted.train, fitted.validation, tcfg);
    return fitted;
}

}  // namespace

TEST_CASE("training") {
    SECTION("one epoch at lr zero changes nothing and logs one entry") {
        const auto synth = separable_cohort(3, 40);
        TrainConfig tcfg;
        tcfg.learning_rate = 0.0;
        tcfg.epochs = 1;
        tcfg.batch_size = 16;
        tcfg.weight_decay = 0.0;
        auto fitted = fit_clinical_only(synth, tcfg);
        CHECK(fitted.result.log.size() == 1);
        ImlspModel fresh(fitted.model.config());
        for (std::size_t s = 0; s < 4; ++s) {
            CHECK(fitted.model.mtlr_theta()[s].value.values() ==
                  fresh.mtlr_theta()[s].value.values());
        }
        CHECK(fitted.model.fc_weights().value.values() ==
              fresh.fc_weights().value.values());
    }

    SECTION("separable cohort reaches high training concordance") {
        const auto synth = separable_cohort(11, 300);
        TrainConfig tcfg;
        tcfg.learning_rate = 0.02;
        tcfg.epochs = 100;
        tcfg.batch_size = 32;
        tcfg.plateau_patience = 20;
        tcfg.weight_decay = 0.0;
        tcfg.beta = 0.01;
        tcfg.seed = 4;
        auto fitted = fit_clinical_only(synth, tcfg);

        const auto train_patients = synth.cohort.in_split("train");
        std::vector<double> risks;
        std::vector<OutcomeRecord> outcomes;
        for (std::size_t i = 0; i < fitted.train.size(); ++i) {
            auto result = forward(fitted.model, fitted.train[i].volume,
                                  fitted.train[i].clinical);
            risks.push_back(risk_score(result.curves[0], *fitted.model.grid));
            outcomes.push_back(train_patients[i]->outcomes[0]);
        }
        CHECK(concordance_index(risks, outcomes) >= 0.95);
    }

    SECTION("fixed seed gives a bit-identical loss log") {
        const auto synth = separable_cohort(21, 40);
        TrainConfig tcfg;
        tcfg.learning_rate = 0.01;
        tcfg.epochs = 5;
        tcfg.batch_size = 8;
        tcfg.seed = 9;
        auto a = fit_clinical_only(synth, tcfg);
        auto b = fit_clinical_only(synth, tcfg);
        REQUIRE(a.result.log.size() == b.result.log.size());
        for (std::size_t i = 0; i < a.result.log.size(); ++i) {
            CHECK(a.result.log[i].train_loss == b.result.log[i].train_loss);
            CHECK(a.result.log[i].validation_loss == b.result.log[i].validation_loss);
        }
        for (std::size_t s = 0; s < 4; ++s)
            CHECK(a.model.mtlr_theta()[s].value.values() ==
                  b.model.mtlr_theta()[s].value.values());
    }

    SECTION("returned parameters have the best logged validation loss") {
        const auto synth = separable_cohort(31, 60);
        TrainConfig tcfg;
        tcfg.learning_rate = 0.05;  // deliberately jumpy
        tcfg.epochs = 25;
        tcfg.batch_size = 8;
        tcfg.plateau_patience = 4;
        tcfg.seed = 2;
        auto fitted = fit_clinical_only(synth, tcfg);

        double best_logged = std::numeric_limits<double>::infinity();
        for (const auto& e : fitted.result.log)
            best_logged = std::min(best_logged, e.validation_loss);
        const double at_returned = evaluate_loss(fitted.model, fitted.validation,
                                                 tcfg.lambda, tcfg.beta);
        CHECK(at_returned == Catch::Approx(best_logged).margin(1e-12));
        CHECK(fitted.result.best_validation_loss == best_logged);
    }

    SECTION("plateau scheduling reduces the learning rate") {
        const auto synth = separable_cohort(41, 40);
        TrainConfig tcfg;
        tcfg.learning_rate = 0.5;  // will plateau quickly
        tcfg.epochs = 12;
        tcfg.batch_size = 8;
        tcfg.plateau_patience = 2;
        tcfg.plateau_factor = 0.1;
        tcfg.seed = 3;
        auto fitted = fit_clinical_only(synth, tcfg);
        CHECK(fitted.result.log.back().learning_rate < 0.5);
    }
}

TEST_CASE("checkpoint round trip") {
    const auto dir = fs::temp_directory_path() / "imlsp_test_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);

    ImlspModel model(toy_config());
    model.grid.emplace(std::vector<double>{0.5, 1.5, 2.5});
    model.stats.age_mean = 61.0;
    model.stats.age_sd = 10.0;
    model.modality = Modality::kImageOnly;
    model.trained_epochs = 17;
    Rng rng(23);
    for (auto& [name, p] : model.named_parameters())
        for (auto& v : p->value.values()) v = rng.normal();

    const auto path = dir / "model.ckpt";
    save_checkpoint(model, path);

    SECTION("bit-exact parameters, config and forward pass") {
        auto loaded = load_checkpoint(path);
        CHECK(loaded.modality == Modality::kImageOnly);
        CHECK(loaded.trained_epochs == 17);
        CHECK(loaded.grid->boundaries() == model.grid->boundaries());
        CHECK(loaded.stats.age_mean == 61.0);

        auto named_a = model.named_parameters();
        auto named_b = loaded.named_parameters();
        REQUIRE(named_a.size() == named_b.size());
        for (std::size_t i = 0; i < named_a.size(); ++i)
            CHECK(named_a[i].second->value.values() ==
                  named_b[i].second->value.values());

        Rng vrng(31);
        const auto vol = random_volume(model.config(), vrng);
        const auto clin = random_clinical(model.config().clinical_width, vrng);
        auto a = forward(model, vol, clin);
        auto b = forward(loaded, vol, clin);
        for (std::size_t s = 0; s < 4; ++s)
            CHECK(a.curves[s].pmf == b.curves[s].pmf);
    }

    SECTION("identical saves produce identical bytes") {
        const auto path2 = dir / "model2.ckpt";
        save_checkpoint(model, path2);
        std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
        const std::string sa((std::istreambuf_iterator<char>(a)), {});
        const std::string sb((std::istreambuf_iterator<char>(b)), {});
        CHECK(sa == sb);
    }

    SECTION("truncated file is a checkpoint error, not a crash") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), {});
        in.close();
        for (const std::size_t keep :
             {std::size_t{4}, std::size_t{40}, bytes.size() / 2, bytes.size() - 3}) {
            const auto trunc_path = dir / "trunc.ckpt";
            std::ofstream out(trunc_path, std::ios::binary);
            out.write(bytes.data(), static_cast<std::streamsize>(keep));
            out.close();
            CHECK_THROWS_AS(load_checkpoint(trunc_path), CheckpointError);
        }
    }

    SECTION("loading against a different architecture names the tensor") {
        EncoderConfig other = toy_config();
        other.conv_layers = {{3}, {4}};
        CHECK_THROWS_WITH(load_checkpoint(path, other),
                          Catch::Matchers::ContainsSubstring("conv1.weight"));
    }

    SECTION("garbage magic is rejected") {
        const auto bad = dir / "bad.ckpt";
        std::ofstream(bad, std::ios::binary) << "not a checkpoint at all";
        CHECK_THROWS_AS(load_checkpoint(bad), CheckpointError);
    }

    fs::remove_all(dir);
}
