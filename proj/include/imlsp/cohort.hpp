#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "imlsp/clinical.hpp"
#include "imlsp/error.hpp"
#include "imlsp/targets.hpp"
#include "imlsp/volume.hpp"

namespace imlsp {

struct CohortPatient {
    ClinicalRecord clinical;
    VolumeSample volume;
    std::array<OutcomeRecord, labels::kCount> outcomes;
    std::string split;  // train | validation | test
};

struct Cohort {
    std::vector<CohortPatient> patients;

    std::vector<const CohortPatient*> in_split(const std::string& tag) const {
        std::vector<const CohortPatient*> out;
        for (const auto& p : patients)
            if (p.split == tag) out.push_back(&p);
        return out;
    }
};

struct RejectedPatient {
    std::string id;
    std::string reason;
};

struct LoadedCohort {
    Cohort cohort;
    std::vector<RejectedPatient> rejected;
};

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline const std::vector<std::string>& clinical_csv_columns() {
    static const std::vector<std::string> cols = {
        "id",      "age",        "sex",        "cigarettes",
        "smoke_status", "ecog",  "t_stage",    "n_stage",
        "ajcc_stage",   "hpv_status", "chemotherapy", "treatment_modality"};
    return cols;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

}  // namespace detail

// Writes the cohort to `dir`: clinical.csv, one ct/mask volume pair per
// patient, and manifest.json tying them together. Returns the manifest path.
inline std::filesystem::path write_cohort(const std::filesystem::path& dir,
                                          const Cohort& cohort) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "volumes");

    std::ofstream csv(dir / "clinical.csv");
    if (!csv) throw DataError("cannot write " + (dir / "clinical.csv").string());
    {
        const auto& cols = detail::clinical_csv_columns();
        for (std::size_t i = 0; i < cols.size(); ++i)
            csv << (i ? "," : "") << cols[i];
        csv << "\n";
    }

    nlohmann::json manifest;
    manifest["clinical_csv"] = "clinical.csv";
    manifest["patients"] = nlohmann::json::array();

    for (std::size_t row = 0; row < cohort.patients.size(); ++row) {
        const auto& p = cohort.patients[row];
        const auto& c = p.clinical;
        csv << c.id << "," << detail::format_double(c.age) << "," << c.sex << ","
            << detail::format_double(c.cigarettes) << "," << c.smoke_status << ","
            << c.ecog << "," << c.t_stage << "," << c.n_stage << ","
            << c.ajcc_stage << "," << c.hpv_status << "," << c.chemotherapy << ","
            << c.treatment_modality << "\n";

        const std::string ct_rel = "volumes/" + c.id + "_ct.json";
        const std::string mask_rel = "volumes/" + c.id + "_mask.json";
        VolumeChannel ct{p.volume.extents, p.volume.spacing_mm, "ct", p.volume.ct};
        write_volume_channel(dir / ct_rel, ct);
        VolumeChannel mask{p.volume.extents, p.volume.spacing_mm, "mask", {}};
        mask.data.reserve(p.volume.mask.size());
        for (auto m : p.volume.mask) mask.data.push_back(static_cast<float>(m));
        write_volume_channel(dir / mask_rel, mask);

        nlohmann::json entry;
        entry["id"] = c.id;
        entry["clinical_row"] = row;
        entry["ct_path"] = ct_rel;
        entry["mask_path"] = mask_rel;
        entry["split"] = p.split;
        nlohmann::json outcomes;
        for (std::size_t s = 0; s < labels::kCount; ++s) {
            outcomes[labels::names()[s]] = {
                {"time_years", p.outcomes[s].time_years},
                {"event", p.outcomes[s].event}};
        }
        entry["outcomes"] = outcomes;
        manifest["patients"].push_back(entry);
    }

    const fs::path manifest_path = dir / "manifest.json";
    std::ofstream mf(manifest_path);
    if (!mf) throw DataError("cannot write " + manifest_path.string());
    mf << manifest.dump(2) << "\n";
    return manifest_path;
}

// Loads and validates a cohort. Structural manifest problems throw;
// per-patient problems (missing files, malformed rows, unknown enumeration
// tokens, extent mismatches) exclude the patient and are returned in the
// rejection report, mirroring a missing-data exclusion step.
inline LoadedCohort load_cohort(const std::filesystem::path& manifest_path,
                                const std::map<std::string, double>&
                                    modality_coding = default_modality_coding()) {
    namespace fs = std::filesystem;
    std::ifstream mf(manifest_path);
    if (!mf) throw DataError("missing manifest " + manifest_path.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + manifest_path.string() + ": " +
                        e.what());
    }
    const fs::path dir = manifest_path.parent_path();

    // Clinical CSV, indexed by row.
    std::vector<std::vector<std::string>> rows;
    if (manifest.contains("clinical_csv")) {
        const fs::path csv_path =
            dir / manifest.at("clinical_csv").get<std::string>();
        std::ifstream csv(csv_path);
        if (!csv) throw DataError("missing clinical CSV " + csv_path.string());
        std::string line;
        if (!std::getline(csv, line))
            throw DataError("empty clinical CSV " + csv_path.string());
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::split_csv_line(line) != detail::clinical_csv_columns())
            throw DataError("unexpected clinical CSV header in " + csv_path.string());
        while (std::getline(csv, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) rows.push_back(detail::split_csv_line(line));
        }
    }

    LoadedCohort out;
    if (!manifest.contains("patients")) return out;

    const NormalizationStats dummy_stats;  // token validation only
    for (const auto& entry : manifest.at("patients")) {
        std::string id = "<unknown>";
        try {
            id = entry.at("id").get<std::string>();
            CohortPatient patient;

            const std::size_t row = entry.at("clinical_row").get<std::size_t>();
            if (row >= rows.size())
                throw DataError("clinical_row " + std::to_string(row) +
                                " beyond CSV with " + std::to_string(rows.size()) +
                                " rows");
            const auto& fields = rows[row];
            if (fields.size() != detail::clinical_csv_columns().size())
                throw DataError("clinical row has " + std::to_string(fields.size()) +
                                " fields, expected " +
                                std::to_string(detail::clinical_csv_columns().size()));
            for (const auto& f : fields)
                if (f.empty()) throw DataError("missing value in clinical row");

            ClinicalRecord& c = patient.clinical;
            c.id = fields[0];
            if (c.id != id)
                throw DataError("manifest id '" + id + "' does not match CSV row id '" +
                                c.id + "'");
            try {
                c.age = std::stod(fields[1]);
                c.cigarettes = std::stod(fields[3]);
            } catch (const std::exception&) {
                throw DataError("non-numeric age or cigarettes value");
            }
            if (!(c.age > 0.0)) throw DataError("age must be positive");
            c.sex = fields[2];
            c.smoke_status = fields[4];
            c.ecog = fields[5];
            c.t_stage = fields[6];
            c.n_stage = fields[7];
            c.ajcc_stage = fields[8];
            c.hpv_status = fields[9];
            c.chemotherapy = fields[10];
            c.treatment_modality = fields[11];
            (void)encode_clinical(c, dummy_stats, modality_coding);  // token check

            const auto ct =
                read_volume_channel(dir / entry.at("ct_path").get<std::string>());
            const auto mask =
                read_volume_channel(dir / entry.at("mask_path").get<std::string>());
            if (ct.extents != mask.extents)
                throw DataError("CT extents " + Tensor::shape_string({ct.extents[0],
                                ct.extents[1], ct.extents[2]}) +
                                " do not match mask extents " +
                                Tensor::shape_string({mask.extents[0], mask.extents[1],
                                mask.extents[2]}));
            patient.volume.id = id;
            patient.volume.extents = ct.extents;
            patient.volume.spacing_mm = ct.spacing_mm;
            patient.volume.ct = ct.data;
            patient.volume.mask.reserve(mask.data.size());
            for (float v : mask.data) {
                if (v != 0.0f && v != 1.0f)
                    throw DataError("mask contains a value other than 0/1");
                patient.volume.mask.push_back(v != 0.0f ? 1 : 0);
            }

            const auto& outcomes = entry.at("outcomes");
            for (std::size_t s = 0; s < labels::kCount; ++s) {
                const auto& o = outcomes.at(labels::names()[s]);
                OutcomeRecord rec;
                rec.label = s;
                rec.time_years = o.at("time_years").get<double>();
                rec.event = o.at("event").get<bool>();
                if (!(rec.time_years > 0.0) || !std::isfinite(rec.time_years))
                    throw DataError("outcome time for '" + labels::names()[s] +
                                    "' must be positive and finite");
                patient.outcomes[s] = rec;
            }

            patient.split = entry.value("split", std::string("train"));
            out.cohort.patients.push_back(std::move(patient));
        } catch (const Error& e) {
            out.rejected.push_back({id, e.what()});
        } catch (const nlohmann::json::exception& e) {
            out.rejected.push_back({id, std::string("manifest entry: ") + e.what()});
        }
    }
    return out;
}

}  // namespace imlsp
