#pragma once

#include "steerbench/bench/records.hpp"
#include "steerbench/codec.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace steerbench::bench {

struct CurveBin {
    std::string method;
    double lo = 0.0;
    double hi = 0.0;
    int runs = 0;
    double success_rate = 0.0;
};

// Equal-width bins over the observed per-run edit distances of one method.
// Empty bins are kept with runs = 0.
std::vector<CurveBin> distance_curve(const std::vector<RunRecord> &records, const std::string &method, int bins = 10);

struct AlphaMean {
    std::string method;
    std::string topic; // "*" aggregates topics
    double alpha = 0.0;
    int runs = 0;
    double success_rate = 0.0;
    double mean_edit_distance = 0.0;
    std::optional<double> mean_coherence;
    std::optional<double> mean_token_probability;
};

std::vector<AlphaMean> alpha_means(const std::vector<RunRecord> &records, bool per_topic);

struct Band {
    double mean = 0.0;
    double sd = 0.0; // sample standard deviation (n - 1)
    int n = 0;
};

// Clean coherence once per prompt id.
std::optional<Band> clean_coherence_band(const std::vector<RunRecord> &records);

struct SimilarityTable {
    std::vector<std::string> methods;
    codec::Matrix cosine;
};

// Mean edit direction per (method, topic) from stored directions, then the
// topic-averaged method x method cosine matrix. Methods without usable
// directions are left out.
std::optional<SimilarityTable> similarity_from_records(const std::vector<RunRecord> &records);

std::string curves_svg(const std::vector<CurveBin> &bins);
std::string pareto_svg(const std::vector<AlphaMean> &points, const std::optional<Band> &band);
std::string heatmap_svg(const SimilarityTable &table);

struct ReportFiles {
    std::vector<std::filesystem::path> written;
    std::vector<std::string> notes;
};

// records.csv (one row per record), summary.csv, alpha_means.csv, curves.csv,
// pareto.csv, cosine.csv, layers.csv and curves/pareto/cosine SVGs. Throws
// ContractError on an empty record set.
ReportFiles emit_report(const std::vector<RunRecord> &records, const std::filesystem::path &out_dir);

// Every records.jsonl below `dir` (or `dir` itself when it is a file).
std::vector<RunRecord> collect_records(const std::filesystem::path &dir);

std::string csv_escape(const std::string &field);

} // namespace steerbench::bench
