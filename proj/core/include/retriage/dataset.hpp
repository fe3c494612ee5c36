#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "retriage/image.hpp"
#include "retriage/rng.hpp"

namespace retriage::dataset {

inline constexpr int kNumGrades = 5;

enum class Source { APTOS, IDRID, SYNTH };

std::string source_name(Source s);
Source source_from_name(const std::string& name);

/// One labeled fundus record. Pixels may live in memory, on disk, or be
/// absent entirely (label-only manifests).
struct Sample {
    std::string id;
    Source source = Source::SYNTH;
    int grade = 0;  // ICDR 0..4
    std::optional<RawImage> pixels;
    std::optional<std::string> path;
};

/// Ordered collection of samples plus per-grade totals.
struct Manifest {
    std::vector<Sample> samples;
    std::array<std::int64_t, kNumGrades> counts{};

    std::size_t size() const { return samples.size(); }
    void push(Sample s);

    /// Recomputes counts from samples; true when they already agreed.
    bool counts_consistent() const;
};

/// Column naming for CSV manifests. Defaults follow the APTOS convention.
struct CsvSchema {
    std::string id_column = "id_code";
    std::string grade_column = "diagnosis";
};

/// Parse a CSV manifest (UTF-8, comma-separated, header row). One sample
/// per data row, order preserved. Throws ParseError with the 1-based data
/// row number on malformed rows and ValidationError on grades outside 0..4.
Manifest load_manifest(const std::string& csv_text, Source source, const CsvSchema& schema = {});

/// Convenience: read the file at `path` and parse it.
Manifest load_manifest_file(const std::string& path, Source source, const CsvSchema& schema = {});

/// Concatenate b after a; counts are elementwise sums. Throws
/// CollisionError on a duplicate (source, id) pair.
Manifest merge(const Manifest& a, const Manifest& b);

/// Controls the synthetic fundus generator.
struct SynthParams {
    int image_side = 64;
    int lesions_per_grade = 3;
    int vessel_walks = 6;
    std::uint64_t seed = 0;
};

/// Deterministic synthetic fundus: a bright retina disk on dark background,
/// dark random-walk vessels, and exactly grade * lesions_per_grade small
/// bright lesions inside the disk. Lesions never touch each other, so
/// connected-component analysis recovers their count. Throws
/// GenerationError when image_side cannot accommodate the lesions, and
/// ValidationError on an invalid grade or params.
RawImage synth_image(int grade, const SynthParams& params, Rng& rng);

/// Build a full synthetic manifest with `per_grade` samples of each grade.
/// Sample ids are synth_g<grade>_<index>; pixels are kept in memory.
Manifest synth_manifest(int per_grade, const SynthParams& params);

struct FoldAssignment {
    std::vector<int> fold_of;  // one fold index per sample
    std::vector<std::string> warnings;
};

/// Stratified k-fold assignment: within every class, fold sizes differ by
/// at most one. Deterministic given seed. Records a warning (but still
/// assigns) when k exceeds the smallest class count.
FoldAssignment stratified_folds(const std::vector<int>& labels, int k, std::uint64_t seed);

}  // namespace retriage::dataset
