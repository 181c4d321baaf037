#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "imlsp/cohort.hpp"
#include "imlsp/error.hpp"
#include "imlsp/rng.hpp"

namespace imlsp {

// Synthetic cohort generator with known ground-truth hazards, for desk-scale
// verification. Clinical features follow the published cohort's marginal
// distributions; each volume carries a Gaussian blob whose intensity (or
// size) is prognostic. The four event times come from exponential hazards
// that are log-linear in a shared latent risk plus small per-label noise, so
// the labels are correlated.
struct SyntheticConfig {
    std::size_t n_patients = 200;
    std::uint64_t seed = 0;

    std::array<std::size_t, 3> vol_extents = {16, 16, 8};
    std::array<double, 3> blob_center_frac = {0.5, 0.5, 0.5};
    double blob_center_jitter_vox = 1.0;
    double blob_radius_vox = 2.5;
    double blob_amplitude_lo = 150.0;  // HU over background
    double blob_amplitude_hi = 500.0;
    bool signal_in_size = false;  // signal carried by radius instead of intensity
    double noise_hu = 20.0;
    double background_hu = 0.0;  // e.g. -500 for an air-like background

    // Hazard model: log h_s = log(base_s) + latent + label_noise.
    double clinical_weight = 1.2;  // latent weight on standardized age
    double image_weight = 1.2;     // latent weight on the standardized blob signal
    double label_noise_sd = 0.25;
    std::array<double, labels::kCount> base_hazards = {0.30, 0.25, 0.20, 0.25};
    double censoring_max_years = 8.0;  // uniform censoring window; <= 0 disables

    double train_fraction = 0.6;
    double validation_fraction = 0.2;  // remainder is the test split
};

struct PatientTruth {
    double latent = 0.0;
    std::array<double, labels::kCount> log_hazard{};
    std::array<double, 3> blob_center_vox{};
    double blob_radius_vox = 0.0;
    double blob_amplitude = 0.0;
};

struct SyntheticCohort {
    Cohort cohort;
    std::vector<PatientTruth> truth;  // aligned with cohort.patients
};

inline constexpr std::size_t kSyntheticMinPatients = 10;

inline SyntheticCohort generate_synthetic_cohort(const SyntheticConfig& cfg) {
    if (cfg.n_patients < kSyntheticMinPatients)
        throw ConfigError("generate_synthetic_cohort: need at least " +
                          std::to_string(kSyntheticMinPatients) +
                          " patients, got " + std::to_string(cfg.n_patients));
    if (cfg.train_fraction + cfg.validation_fraction >= 1.0)
        throw ConfigError("generate_synthetic_cohort: split fractions leave no test");

    Rng rng(derive_seed(cfg.seed, 0x5f37, 0xc04857));
    SyntheticCohort out;
    out.cohort.patients.resize(cfg.n_patients);
    out.truth.resize(cfg.n_patients);

    const auto draw_category = [&](const std::vector<std::pair<std::string, double>>&
                                       options) {
        std::vector<double> w;
        for (const auto& [_, p] : options) w.push_back(p);
        return options[rng.categorical(w)].first;
    };

    for (std::size_t i = 0; i < cfg.n_patients; ++i) {
        auto& patient = out.cohort.patients[i];
        auto& truth = out.truth[i];
        auto& c = patient.clinical;

        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "p%04zu", i + 1);
        c.id = idbuf;
        c.age = std::clamp(rng.normal(61.5, 10.5), 25.0, 90.0);
        c.sex = rng.uniform() < 0.796 ? "male" : "female";
        c.cigarettes = rng.uniform() < 0.35 ? 0.0 : rng.uniform(1.0, 60.0);
        c.smoke_status = draw_category(
            {{"current", 0.32}, {"ex", 0.40}, {"non", 0.27}, {"unknown", 0.01}});
        c.ecog = draw_category({{"0", 0.62}, {"1", 0.27}, {"2", 0.08}, {">2", 0.03}});
        c.t_stage = draw_category({{"T0", 0.015}, {"T1", 0.21}, {"T2", 0.28},
                                   {"T3", 0.29}, {"T4", 0.20}});
        c.n_stage = draw_category({{"N0", 0.39}, {"N1", 0.09}, {"N2", 0.46},
                                   {"N3", 0.06}});
        c.ajcc_stage = draw_category({{"I", 0.12}, {"II", 0.13}, {"III", 0.20},
                                      {"IVA", 0.45}, {"IVB", 0.08},
                                      {"unknown", 0.02}});
        c.hpv_status = draw_category(
            {{"positive", 0.42}, {"unknown", 0.43}, {"negative", 0.15}});
        c.chemotherapy = rng.uniform() < 0.40 ? "yes" : "no";
        {
            std::vector<std::string> modalities;
            for (const auto& [name, _] : default_modality_coding())
                modalities.push_back(name);
            c.treatment_modality = modalities[rng.uniform_index(modalities.size())];
        }

        // Image signal: one uniform draw, standardized to unit variance.
        const double u = rng.uniform();
        const double image_z = (u - 0.5) * std::sqrt(12.0);
        truth.blob_amplitude =
            cfg.signal_in_size
                ? cfg.blob_amplitude_hi
                : cfg.blob_amplitude_lo +
                      u * (cfg.blob_amplitude_hi - cfg.blob_amplitude_lo);
        truth.blob_radius_vox = cfg.signal_in_size
                                    ? cfg.blob_radius_vox * (0.6 + 0.8 * u)
                                    : cfg.blob_radius_vox;
        for (int a = 0; a < 3; ++a)
            truth.blob_center_vox[a] =
                cfg.blob_center_frac[a] *
                    static_cast<double>(cfg.vol_extents[a] - 1) +
                rng.uniform(-cfg.blob_center_jitter_vox, cfg.blob_center_jitter_vox);

        // Volume: background noise plus the blob; the mask is the blob support.
        auto& vol = patient.volume;
        vol.id = c.id;
        vol.extents = cfg.vol_extents;
        vol.spacing_mm = {1.0, 1.0, 1.0};
        vol.ct.resize(vol.voxel_count());
        vol.mask.resize(vol.voxel_count());
        const double sigma = truth.blob_radius_vox / 1.5;
        for (std::size_t z = 0; z < vol.extents[2]; ++z)
            for (std::size_t y = 0; y < vol.extents[1]; ++y)
                for (std::size_t x = 0; x < vol.extents[0]; ++x) {
                    const double dx = static_cast<double>(x) - truth.blob_center_vox[0];
                    const double dy = static_cast<double>(y) - truth.blob_center_vox[1];
                    const double dz = static_cast<double>(z) - truth.blob_center_vox[2];
                    const double d2 = dx * dx + dy * dy + dz * dz;
                    const std::size_t idx = vol.index(x, y, z);
                    vol.ct[idx] = static_cast<float>(
                        cfg.background_hu + rng.normal(0.0, cfg.noise_hu) +
                        truth.blob_amplitude * std::exp(-d2 / (2.0 * sigma * sigma)));
                    vol.mask[idx] =
                        d2 <= truth.blob_radius_vox * truth.blob_radius_vox ? 1 : 0;
                }

        // Shared latent risk and per-label hazards.
        const double age_z = (c.age - 61.5) / 10.5;
        truth.latent = cfg.clinical_weight * age_z + cfg.image_weight * image_z;
        const double censor_time =
            cfg.censoring_max_years > 0.0
                ? std::max(1e-6, rng.uniform(0.0, cfg.censoring_max_years))
                : std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < labels::kCount; ++s) {
            truth.log_hazard[s] = std::log(cfg.base_hazards[s]) + truth.latent +
                                  rng.normal(0.0, cfg.label_noise_sd);
            const double event_time = rng.exponential(std::exp(truth.log_hazard[s]));
            OutcomeRecord& rec = patient.outcomes[s];
            rec.label = s;
            rec.event = event_time <= censor_time;
            rec.time_years = rec.event ? event_time : censor_time;
        }
    }

    // Deterministic shuffled split assignment.
    std::vector<std::size_t> order(cfg.n_patients);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const auto n_train =
        static_cast<std::size_t>(cfg.train_fraction * static_cast<double>(cfg.n_patients));
    const auto n_val = static_cast<std::size_t>(cfg.validation_fraction *
                                                static_cast<double>(cfg.n_patients));
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        auto& p = out.cohort.patients[order[pos]];
        p.split = pos < n_train ? "train"
                  : pos < n_train + n_val ? "validation"
                                          : "test";
    }
    return out;
}

inline void write_ground_truth(const std::filesystem::path& path,
                               const SyntheticCohort& synth) {
    nlohmann::json j;
    j["patients"] = nlohmann::json::array();
    for (std::size_t i = 0; i < synth.truth.size(); ++i) {
        const auto& t = synth.truth[i];
        nlohmann::json entry;
        entry["id"] = synth.cohort.patients[i].clinical.id;
        entry["latent"] = t.latent;
        for (std::size_t s = 0; s < labels::kCount; ++s)
            entry["log_hazard"][labels::names()[s]] = t.log_hazard[s];
        entry["blob_center_vox"] = t.blob_center_vox;
        entry["blob_radius_vox"] = t.blob_radius_vox;
        entry["blob_amplitude"] = t.blob_amplitude;
        j["patients"].push_back(entry);
    }
    std::ofstream f(path);
    if (!f) throw DataError("cannot write ground truth " + path.string());
    f << j.dump(2) << "\n";
}

}  // namespace imlsp
