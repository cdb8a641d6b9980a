#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "sharedrep/data.hpp"

using namespace sharedrep;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = fs::temp_directory_path() /
                (std::string("sharedrep_") + info->test_suite_name() + "_" + info->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    fs::path path_;
};

Dataset two_record_dataset() {
    Dataset ds;
    ds.name = "tiny";
    ds.dim = 4;
    ds.scheme = LabelScheme::multiclass();
    ds.encoder = "test";
    ds.records.push_back({"m-1", Vector{1, 2, 3, 4}, Vector{0.5f, 0.25f, -1, 0}, 2, Split::Train});
    ds.records.push_back({"m-2", std::nullopt, Vector{-1, -2, -3, -4}, 0, std::nullopt});
    return ds;
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    return nlohmann::json::parse(in);
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream(path) << j.dump(2);
}

std::vector<int> labels_with_counts(std::initializer_list<std::size_t> counts) {
    std::vector<int> labels;
    int c = 0;
    for (std::size_t n : counts) {
        for (std::size_t i = 0; i < n; ++i) labels.push_back(c);
        ++c;
    }
    return labels;
}

double cosine(const Vector& a, const Vector& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += double(a[i]) * b[i];
        na += double(a[i]) * a[i];
        nb += double(b[i]) * b[i];
    }
    return dot / std::sqrt(na * nb);
}

/// Fraction of records whose nearest prototype (by cosine) is their class.
double nearest_prototype_accuracy(const SynthDataset& s, bool text) {
    const auto& protos = text ? s.text_prototypes : s.image_prototypes;
    std::size_t correct = 0;
    for (const auto& r : s.data.records) {
        const Vector& v = text ? *r.text : r.image;
        int best = 0;
        double best_sim = -2;
        for (std::size_t c = 0; c < protos.size(); ++c) {
            const double sim = cosine(v, protos[c]);
            if (sim > best_sim) {
                best_sim = sim;
                best = int(c);
            }
        }
        correct += best == r.label;
    }
    return double(correct) / double(s.data.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// files

TEST(DatasetFiles, TwoRecordManifest) {
    TempDir dir;
    const Dataset ds = two_record_dataset();
    write_dataset(ds, dir.file("tiny.json"), dir.file("tiny.mreb"));
    const Dataset loaded = load_dataset(dir.file("tiny.json"));
    ASSERT_EQ(loaded.size(), 2u);
    EXPECT_EQ(loaded.records[0].id, "m-1");
    EXPECT_EQ(loaded.records[1].id, "m-2");
    EXPECT_EQ(loaded, ds);
}

TEST(DatasetFiles, StoreLayout) {
    const std::string bytes = store_bytes(two_record_dataset());
    EXPECT_EQ(bytes.substr(0, 4), "MREB");
    // header 16 bytes, 2 flag bytes, then 4 + 4 + 4 floats
    EXPECT_EQ(bytes.size(), 16u + 2u + 12u * 4u);
    EXPECT_EQ(bytes[16], 1);
    EXPECT_EQ(bytes[17], 0);
}

TEST(DatasetFiles, GeneratedRoundTrip) {
    TempDir dir;
    SynthSpec spec;
    spec.classes = 3;
    spec.per_class = 20;
    spec.dim = 8;
    spec.seed = 3;
    Dataset ds = with_split_tags(synth_generate(spec), 0.6, 0.2, 4);
    ds.records[5].text.reset();
    write_dataset(ds, dir.file("a/m.json"), dir.file("a/store.mreb"));
    EXPECT_EQ(load_dataset(dir.file("a/m.json")), ds);
    EXPECT_EQ(read_json(dir.file("a/m.json"))["store"], "store.mreb");
}

TEST(DatasetFiles, TextLengthMismatchNamesRecord) {
    TempDir dir;
    write_dataset(two_record_dataset(), dir.file("m.json"), dir.file("s.mreb"));
    auto j = read_json(dir.file("m.json"));
    j["records"][0]["text_len"] = 5;
    write_json(dir.file("m.json"), j);
    try {
        load_dataset(dir.file("m.json"));
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("m-1"), std::string::npos) << e.what();
    }
}

TEST(DatasetFiles, DuplicateIdsRejected) {
    TempDir dir;
    Dataset ds = two_record_dataset();
    ds.records[1].id = "m-1";
    // write_dataset validates too, so corrupt the manifest after writing
    write_dataset(two_record_dataset(), dir.file("m.json"), dir.file("s.mreb"));
    auto j = read_json(dir.file("m.json"));
    j["records"][1]["id"] = "m-1";
    write_json(dir.file("m.json"), j);
    EXPECT_THROW(load_dataset(dir.file("m.json")), LoadError);
    EXPECT_THROW(ds.validate(), DataError);
}

TEST(DatasetFiles, NonFiniteAndCorruptStoreRejected) {
    TempDir dir;
    write_dataset(two_record_dataset(), dir.file("m.json"), dir.file("s.mreb"));
    std::string bytes;
    {
        std::ifstream in(dir.file("s.mreb"), std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    std::string nan_bytes = bytes;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(nan_bytes.data() + 18 + 4 * 4, &nan, 4);  // first image float of m-1
    std::ofstream(dir.file("s.mreb"), std::ios::binary) << nan_bytes;
    try {
        load_dataset(dir.file("m.json"));
        FAIL();
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("m-1"), std::string::npos);
    }
    std::ofstream(dir.file("s.mreb"), std::ios::binary) << bytes.substr(0, 30);
    EXPECT_THROW(load_dataset(dir.file("m.json")), LoadError);
    std::ofstream(dir.file("s.mreb"), std::ios::binary) << "XXXX" + bytes.substr(4);
    EXPECT_THROW(load_dataset(dir.file("m.json")), LoadError);
    EXPECT_THROW(load_dataset(dir.file("missing.json")), IoError);
}

TEST(DatasetFiles, FingerprintTracksContent) {
    Dataset a = two_record_dataset();
    Dataset b = a;
    EXPECT_EQ(dataset_fingerprint(a), dataset_fingerprint(b));
    b.records[0].label = 1;
    EXPECT_NE(dataset_fingerprint(a), dataset_fingerprint(b));
}

// ---------------------------------------------------------------------------
// labels

TEST(Labels, MergeRule) {
    Dataset ds = two_record_dataset();
    ds.records.clear();
    for (int y : {0, 1, 2, 2}) ds.records.push_back({"r" + std::to_string(ds.size()), std::nullopt, Vector(4, 1), y, {}});
    const Dataset bin = to_binary_labels(ds);
    EXPECT_EQ(bin.labels(), (std::vector<int>{0, 1, 1, 1}));
    EXPECT_EQ(bin.scheme, LabelScheme::binary());
    EXPECT_EQ(bin.records[3].id, "r3");
    EXPECT_EQ(to_binary_labels(bin), bin);
}

TEST(Labels, CountingOracle) {
    SynthSpec spec;
    spec.classes = 3;
    spec.per_class = 17;
    spec.dim = 4;
    const Dataset ds = synth_generate(spec);
    const auto src = ds.labels();
    const auto bin = to_binary_labels(ds).labels();
    EXPECT_EQ(std::count(bin.begin(), bin.end(), 1),
              std::count(src.begin(), src.end(), 1) + std::count(src.begin(), src.end(), 2));
}

TEST(Labels, AllZeroUnchangedAndUnknownRejected) {
    Dataset ds = two_record_dataset();
    ds.records[0].label = 0;
    EXPECT_EQ(to_binary_labels(ds).labels(), (std::vector<int>{0, 0}));
    ds.records[0].label = 3;
    EXPECT_THROW(to_binary_labels(ds), DataError);
}

// ---------------------------------------------------------------------------
// k-fold

TEST(KFold, ExactDivisibility) {
    const auto labels = labels_with_counts({5, 5});
    const auto r = kfold_split(labels, 5, 1);
    ASSERT_EQ(r.folds.size(), 5u);
    EXPECT_TRUE(r.warnings.empty());
    for (const auto& f : r.folds) {
        ASSERT_EQ(f.validation.size(), 2u);
        EXPECT_NE(labels[f.validation[0]], labels[f.validation[1]]);
        EXPECT_EQ(f.train.size(), 8u);
    }
}

TEST(KFold, Deterministic) {
    const auto labels = labels_with_counts({13, 29, 7});
    const auto a = kfold_split(labels, 5, 42), b = kfold_split(labels, 5, 42), c = kfold_split(labels, 5, 43);
    for (std::size_t f = 0; f < 5; ++f) {
        EXPECT_EQ(a.folds[f].validation, b.folds[f].validation);
        EXPECT_EQ(a.folds[f].train, b.folds[f].train);
    }
    bool differs = false;
    for (std::size_t f = 0; f < 5; ++f) differs |= a.folds[f].validation != c.folds[f].validation;
    EXPECT_TRUE(differs);
}

TEST(KFold, PartitionArithmetic) {
    const auto labels = labels_with_counts({40, 63});
    const auto r = kfold_split(labels, 5, 7);
    std::size_t total = 0;
    std::vector<int> seen(labels.size(), 0);
    for (const auto& f : r.folds) {
        EXPECT_TRUE(f.validation.size() == 20 || f.validation.size() == 21) << f.validation.size();
        total += f.validation.size();
        for (std::size_t i : f.validation) ++seen[i];
        EXPECT_EQ(f.train.size() + f.validation.size(), labels.size());
        std::set<std::size_t> tr(f.train.begin(), f.train.end());
        for (std::size_t i : f.validation) EXPECT_FALSE(tr.count(i));
    }
    EXPECT_EQ(total, 103u);
    for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(KFold, StratifiedWithinOne) {
    const auto labels = labels_with_counts({11, 23, 9, 4});
    const auto r = kfold_split(labels, 5, 3);
    EXPECT_FALSE(r.warnings.empty());  // class 3 has 4 < 5 members
    for (int c = 0; c < 4; ++c) {
        std::size_t lo = SIZE_MAX, hi = 0;
        for (const auto& f : r.folds) {
            const auto n = std::size_t(
                std::count_if(f.validation.begin(), f.validation.end(), [&](std::size_t i) { return labels[i] == c; }));
            lo = std::min(lo, n);
            hi = std::max(hi, n);
        }
        EXPECT_LE(hi - lo, 1u) << "class " << c;
    }
}

TEST(KFold, InvalidArguments) {
    const auto labels = labels_with_counts({2, 2});
    EXPECT_THROW(kfold_split(labels, 1, 0), ConfigError);
    EXPECT_THROW(kfold_split(labels, 5, 0), ConfigError);
}

// ---------------------------------------------------------------------------
// availability masks

TEST(Mask, DegenerateLevels) {
    const auto labels = labels_with_counts({7, 3});
    const std::vector<bool> stored(10, true);
    EXPECT_EQ(apply_availability_mask(labels, stored, 100, 1).count(), 10u);
    EXPECT_EQ(apply_availability_mask(labels, stored, 0, 1).count(), 0u);
}

TEST(Mask, HalfOfTwoBalancedClasses) {
    const auto labels = labels_with_counts({10, 10});
    const auto m = apply_availability_mask(labels, std::vector<bool>(20, true), 50, 9);
    std::size_t a = 0, b = 0;
    for (std::size_t i = 0; i < 20; ++i)
        if (m.text_present[i]) (labels[i] == 0 ? a : b)++;
    EXPECT_EQ(a, 5u);
    EXPECT_EQ(b, 5u);
}

TEST(Mask, KeepCountsLargestRemainder) {
    const std::vector<std::size_t> counts{7, 5, 3};  // N = 15
    // level 50: floors 3,2,1 = 6, target round(7.5) = 8, remainders .5,.5,.5
    EXPECT_EQ(stratified_keep_counts(counts, 50), (std::vector<std::size_t>{4, 3, 1}));
    // level 10: floors 0,0,0, target round(1.5) = 2, remainders .7,.5,.3
    EXPECT_EQ(stratified_keep_counts(counts, 10), (std::vector<std::size_t>{1, 1, 0}));
    EXPECT_EQ(stratified_keep_counts(counts, 100), counts);
    EXPECT_THROW(stratified_keep_counts(counts, 101), ConfigError);
}

TEST(Mask, ProportionsNestingAndDeterminism) {
    const auto labels = labels_with_counts({101, 37, 262});
    const std::vector<bool> stored(labels.size(), true);
    std::vector<bool> previous(labels.size(), true);
    for (int level : kAvailabilityLevels) {
        const auto m = apply_availability_mask(labels, stored, level, 77);
        EXPECT_EQ(m.text_present, apply_availability_mask(labels, stored, level, 77).text_present);
        EXPECT_EQ(m.count(), std::size_t(std::floor(level * 400 / 100.0 + 0.5)));
        for (int c = 0; c < 3; ++c) {
            std::size_t n = 0, q = 0;
            for (std::size_t i = 0; i < labels.size(); ++i)
                if (labels[i] == c) {
                    ++n;
                    q += m.text_present[i];
                }
            EXPECT_LE(std::abs(double(q) / double(n) - level / 100.0), 1.0 / double(n));
        }
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (m.text_present[i]) EXPECT_TRUE(previous[i]) << "level " << level;
        previous = m.text_present;
    }
}

TEST(Mask, StoredAbsentTextNeverPresent) {
    const auto labels = labels_with_counts({10, 10});
    std::vector<bool> stored(20, true);
    stored[0] = stored[3] = stored[15] = false;
    for (int level : kAvailabilityLevels) {
        const auto m = apply_availability_mask(labels, stored, level, 5);
        EXPECT_FALSE(m.text_present[0]);
        EXPECT_FALSE(m.text_present[3]);
        EXPECT_FALSE(m.text_present[15]);
    }
    // at 70% each class keeps 7, which still fits within the 8 and 9 stored
    const auto m = apply_availability_mask(labels, stored, 70, 5);
    EXPECT_EQ(m.count(), 14u);
}

TEST(Mask, UnsupportedLevel) {
    const auto labels = labels_with_counts({2, 2});
    EXPECT_THROW(apply_availability_mask(labels, std::vector<bool>(4, true), 55, 0), ConfigError);
}

TEST(Mask, MakeBatchHonoursMask) {
    Dataset ds = two_record_dataset();
    AvailabilityMask mask{50, 0, {false, true}};
    const ModalBatch b = make_batch(ds.records, &mask);
    EXPECT_EQ(b.text_present, (std::vector<bool>{false, false}));  // second record stores no text
    const ModalBatch full = make_batch(ds.records);
    EXPECT_EQ(full.text_present, (std::vector<bool>{true, false}));
    EXPECT_EQ((*full.text)(0, 2), 3);
    EXPECT_EQ(full.image(1, 3), -4);
    EXPECT_EQ(full.labels, (std::vector<int>{2, 0}));
}

// ---------------------------------------------------------------------------
// synthetic data

TEST(Synth, ImageNearestPrototypeIsAccurate) {
    SynthSpec spec;
    spec.classes = 2;
    spec.per_class = 500;
    spec.dim = 16;
    spec.rho_image = 1.0;
    spec.sigma = 0.05;
    spec.seed = 11;
    EXPECT_GE(nearest_prototype_accuracy(synth_generate_with_prototypes(spec), false), 0.99);
}

TEST(Synth, UninformativeTextIsChance) {
    for (std::size_t classes : {2u, 3u}) {
        SynthSpec spec;
        spec.classes = classes;
        spec.per_class = 600;
        spec.dim = 16;
        spec.rho_text = 0.0;
        spec.sigma = 0.3;
        spec.seed = 12;
        const double acc = nearest_prototype_accuracy(synth_generate_with_prototypes(spec), true);
        EXPECT_NEAR(acc, 1.0 / double(classes), 0.05) << classes;
    }
}

TEST(Synth, VectorsAreUnitNormAndDeterministic) {
    SynthSpec spec;
    spec.classes = 3;
    spec.per_class = 10;
    spec.dim = 5;
    spec.seed = 13;
    const Dataset a = synth_generate(spec);
    EXPECT_EQ(store_bytes(a), store_bytes(synth_generate(spec)));
    EXPECT_EQ(a.scheme, LabelScheme::multiclass());
    for (const auto& r : a.records) {
        double n = 0;
        for (Scalar v : r.image) n += double(v) * v;
        EXPECT_NEAR(n, 1.0, 1e-5);
    }
    spec.seed = 14;
    EXPECT_NE(store_bytes(a), store_bytes(synth_generate(spec)));
}

TEST(Synth, InvalidSpec) {
    SynthSpec spec;
    spec.classes = 1;
    EXPECT_THROW(synth_generate(spec), ConfigError);
    spec = {};
    spec.sigma = 0;
    EXPECT_THROW(synth_generate(spec), ConfigError);
    spec = {};
    spec.rho_text = 1.5;
    EXPECT_THROW(synth_generate(spec), ConfigError);
    spec = {};
    spec.dim = 1;
    EXPECT_THROW(synth_generate(spec), ConfigError);
}

TEST(SplitTags, ProportionsPerClass) {
    SynthSpec spec;
    spec.per_class = 50;
    spec.dim = 4;
    const Dataset ds = with_split_tags(synth_generate(spec), 0.6, 0.2, 1);
    EXPECT_TRUE(ds.has_split_tags());
    std::map<std::pair<int, Split>, int> counts;
    for (const auto& r : ds.records) ++counts[{r.label, *r.split}];
    for (int c = 0; c < 2; ++c) {
        EXPECT_EQ((counts[{c, Split::Train}]), 30);
        EXPECT_EQ((counts[{c, Split::Val}]), 10);
        EXPECT_EQ((counts[{c, Split::Test}]), 10);
    }
}
