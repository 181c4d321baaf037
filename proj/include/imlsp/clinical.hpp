#pragma once

#include <array>
#include <cmath>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "imlsp/error.hpp"

namespace imlsp {

inline constexpr std::size_t kClinicalFeatureWidth = 11;

// One patient's clinical variables, as recorded in the cohort CSV.
// Categorical fields hold their enumeration tokens; coding happens in
// encode_clinical.
struct ClinicalRecord {
    std::string id;
    double age = 0.0;         // years at diagnosis
    std::string sex;          // male | female
    double cigarettes = 0.0;  // cigarettes/day x years smoked
    std::string smoke_status; // current | ex | non | unknown
    std::string ecog;         // 0 | 1 | 2 | >2
    std::string t_stage;      // T0..T4
    std::string n_stage;      // N0..N3
    std::string ajcc_stage;   // I | II | III | IVA | IVB | unknown
    std::string hpv_status;   // positive | unknown | negative
    std::string chemotherapy; // yes | no
    std::string treatment_modality;
};

// z-score statistics for the numeric fields, fitted on the training split.
struct NormalizationStats {
    double age_mean = 0.0;
    double age_sd = 1.0;
    double cigarettes_mean = 0.0;
    double cigarettes_sd = 1.0;
};

// Ordinal coding for treatment modality. The published coding table omits
// this feature, so the mapping is explicit and configurable; these defaults
// cover the synthetic cohorts.
inline const std::map<std::string, double>& default_modality_coding() {
    static const std::map<std::string, double> coding = {
        {"rt", 0.0}, {"chemort", 1.0}, {"postop_rt", 2.0}};
    return coding;
}

inline NormalizationStats fit_normalization(
    const std::vector<ClinicalRecord>& training) {
    if (training.size() < 2)
        throw DataError("fit_normalization: need at least 2 training records, got " +
                        std::to_string(training.size()));
    const auto fit = [&](auto field, const char* name, double& mean, double& sd) {
        double m = 0.0;
        for (const auto& r : training) m += field(r);
        m /= static_cast<double>(training.size());
        double acc = 0.0;
        for (const auto& r : training) {
            const double d = field(r) - m;
            acc += d * d;
        }
        double s = std::sqrt(acc / static_cast<double>(training.size() - 1));
        if (s == 0.0) {
            std::cerr << "warning: constant '" << name
                      << "' in training split, z-score denominator forced to 1\n";
            s = 1.0;
        }
        mean = m;
        sd = s;
    };
    NormalizationStats stats;
    fit([](const ClinicalRecord& r) { return r.age; }, "age", stats.age_mean,
        stats.age_sd);
    fit([](const ClinicalRecord& r) { return r.cigarettes; }, "cigarettes",
        stats.cigarettes_mean, stats.cigarettes_sd);
    return stats;
}

namespace detail {

inline double coded(const std::map<std::string, double>& table,
                    const std::string& value, const char* field,
                    const std::string& patient) {
    const auto it = table.find(value);
    if (it == table.end())
        throw DataError("patient '" + patient + "': unknown " + field + " value '" +
                        value + "'");
    return it->second;
}

}  // namespace detail

// Feature vector in the fixed order: age, sex, ECOG, smoke status,
// cigarette exposure, T, N, AJCC, HPV, chemotherapy, treatment modality.
// Codings follow the published table: sex +1/-1, smoke current/ex/non ->
// -1/0/+1 (unknown 0), ECOG 0..3, T 0..4, N 0..3, AJCC I..IVB -> 1..5 with
// unknown 0, HPV +1/0/-1, chemotherapy +1/-1.
inline std::array<double, kClinicalFeatureWidth> encode_clinical(
    const ClinicalRecord& rec, const NormalizationStats& stats,
    const std::map<std::string, double>& modality_coding =
        default_modality_coding()) {
    static const std::map<std::string, double> sex = {{"male", 1.0},
                                                      {"female", -1.0}};
    static const std::map<std::string, double> smoke = {
        {"current", -1.0}, {"ex", 0.0}, {"non", 1.0}, {"unknown", 0.0}};
    static const std::map<std::string, double> ecog = {
        {"0", 0.0}, {"1", 1.0}, {"2", 2.0}, {">2", 3.0}};
    static const std::map<std::string, double> t_stage = {
        {"T0", 0.0}, {"T1", 1.0}, {"T2", 2.0}, {"T3", 3.0}, {"T4", 4.0}};
    static const std::map<std::string, double> n_stage = {
        {"N0", 0.0}, {"N1", 1.0}, {"N2", 2.0}, {"N3", 3.0}};
    static const std::map<std::string, double> ajcc = {
        {"I", 1.0},   {"II", 2.0}, {"III", 3.0},
        {"IVA", 4.0}, {"IVB", 5.0}, {"unknown", 0.0}};
    static const std::map<std::string, double> hpv = {
        {"positive", 1.0}, {"unknown", 0.0}, {"negative", -1.0}};
    static const std::map<std::string, double> chemo = {{"yes", 1.0}, {"no", -1.0}};

    return {
        (rec.age - stats.age_mean) / stats.age_sd,
        detail::coded(sex, rec.sex, "sex", rec.id),
        detail::coded(ecog, rec.ecog, "ECOG", rec.id),
        detail::coded(smoke, rec.smoke_status, "smoke status", rec.id),
        (rec.cigarettes - stats.cigarettes_mean) / stats.cigarettes_sd,
        detail::coded(t_stage, rec.t_stage, "T-stage", rec.id),
        detail::coded(n_stage, rec.n_stage, "N-stage", rec.id),
        detail::coded(ajcc, rec.ajcc_stage, "AJCC stage", rec.id),
        detail::coded(hpv, rec.hpv_status, "HPV status", rec.id),
        detail::coded(chemo, rec.chemotherapy, "chemotherapy", rec.id),
        detail::coded(modality_coding, rec.treatment_modality,
                      "treatment modality", rec.id),
    };
}

}  // namespace imlsp
