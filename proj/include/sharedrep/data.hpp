#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sharedrep/matrix.hpp"
#include "sharedrep/model.hpp"

namespace sharedrep {

enum class Task { Binary, Multiclass };
enum class Split { Train, Val, Test };

const char* to_string(Task t) noexcept;
Task parse_task(const std::string& s);
const char* to_string(Split s) noexcept;
Split parse_split(const std::string& s);

struct LabelScheme {
    enum class Kind { Binary, Multiclass, Generic };
    Kind kind = Kind::Binary;
    std::vector<std::string> class_names;

    static LabelScheme binary();      // not harmful = 0, harmful = 1
    static LabelScheme multiclass();  // not harmful = 0, somewhat harmful = 1, very harmful = 2
    static LabelScheme generic(std::size_t classes);

    std::size_t num_classes() const noexcept { return class_names.size(); }
    std::string name() const;
    static LabelScheme parse(const std::string& name, std::size_t classes);

    friend bool operator==(const LabelScheme&, const LabelScheme&) = default;
};

struct EmbeddingRecord {
    std::string id;
    std::optional<Vector> text;
    Vector image;
    int label = 0;
    std::optional<Split> split;

    friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct Dataset {
    std::string name;
    std::size_t dim = 0;
    LabelScheme scheme;
    std::string encoder;  // provenance only
    std::vector<EmbeddingRecord> records;

    std::size_t size() const noexcept { return records.size(); }
    std::vector<int> labels() const;
    bool has_split_tags() const noexcept;
    /// Throws DataError naming the first offending record.
    void validate() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// Files: a JSON manifest plus a binary "MREB" embedding store.

inline constexpr std::uint32_t kStoreVersion = 1;

std::string store_bytes(const Dataset& ds);
/// The manifest's "store" entry is written relative to the manifest directory.
void write_dataset(const Dataset& ds, const std::string& manifest_path, const std::string& store_path);
Dataset load_dataset(const std::string& manifest_path);

/// Stable 64-bit fingerprint of ids, labels, splits and vector bytes.
std::uint64_t dataset_fingerprint(const Dataset& ds);

// ---------------------------------------------------------------------------

/// Merges labels 1 and 2 into 1. A dataset already on the binary scheme is
/// returned unchanged.
Dataset to_binary_labels(Dataset ds);

/// Dataset restricted to the given record indices, in that order.
Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

/// Tags each class's records train/val/test in the given proportions after a
/// seeded shuffle (test takes the remainder).
Dataset with_split_tags(Dataset ds, double train_frac, double val_frac, std::uint64_t seed);

/// Each vector scaled to unit L2 norm (zero vectors are left as is).
Dataset l2_normalized(Dataset ds);

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

struct KFoldResult {
    std::vector<Fold> folds;
    std::vector<std::string> warnings;
};

/// Stratified k-fold: each class is shuffled under `seed` and dealt round
/// robin, continuing the deal position across classes, so per-class and total
/// fold sizes each differ by at most one.
KFoldResult kfold_split(std::span<const int> labels, std::size_t k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Text-availability masking

inline constexpr std::array<int, 7> kAvailabilityLevels{100, 90, 70, 50, 30, 10, 0};

bool is_supported_level(int level) noexcept;

struct AvailabilityMask {
    int level = 100;
    std::uint64_t seed = 0;
    std::vector<bool> text_present;

    std::size_t count() const noexcept;
};

/// Per-class keep counts: floor(level * n_c / 100) plus one for the classes
/// with the largest remainders (ties to the lower class index) until the total
/// is round(level * N / 100).
std::vector<std::size_t> stratified_keep_counts(std::span<const std::size_t> class_counts, int level);

/// Each class is ranked once by a permutation drawn from `seed`, with records
/// lacking stored text ranked last; the top q_c of the ranking keep their
/// text. The ranking does not depend on `level`, so masks for one seed are
/// nested across levels.
AvailabilityMask apply_availability_mask(std::span<const int> labels,
                                         const std::vector<bool>& text_stored, int level,
                                         std::uint64_t seed);

AvailabilityMask apply_availability_mask(std::span<const EmbeddingRecord> records, int level,
                                         std::uint64_t seed);

/// Packs records into a model batch; text is marked present only where the
/// mask (if given) allows it and the record stores text.
ModalBatch make_batch(std::span<const EmbeddingRecord> records,
                      std::span<const std::size_t> indices, const AvailabilityMask* mask = nullptr);
ModalBatch make_batch(std::span<const EmbeddingRecord> records, const AvailabilityMask* mask = nullptr);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthSpec {
    std::size_t classes = 2;
    std::size_t per_class = 100;
    std::size_t dim = 16;
    double rho_text = 1.0;
    double rho_image = 1.0;
    double sigma = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthDataset {
    Dataset data;
    std::vector<Vector> text_prototypes;   // one unit vector per class
    std::vector<Vector> image_prototypes;
};

/// Per class, unit-sphere text and image prototypes; each record's modality
/// vector is normalize(rho * prototype + sigma * N(0, I)).
SynthDataset synth_generate_with_prototypes(const SynthSpec& spec);
Dataset synth_generate(const SynthSpec& spec);

}  // namespace sharedrep
