#include "sharedrep/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <unordered_set>

#include "binary_io.hpp"
#include "json.hpp"

namespace sharedrep {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(Task t) noexcept { return t == Task::Binary ? "binary" : "multiclass"; }

Task parse_task(const std::string& s) {
    if (s == "binary") return Task::Binary;
    if (s == "multiclass") return Task::Multiclass;
    throw ConfigError("unknown task '" + s + "' (expected binary or multiclass)");
}

const char* to_string(Split s) noexcept {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val" || s == "validation") return Split::Val;
    if (s == "test") return Split::Test;
    throw DataError("unknown split tag '" + s + "'");
}

LabelScheme LabelScheme::binary() { return {Kind::Binary, {"not harmful", "harmful"}}; }

LabelScheme LabelScheme::multiclass() {
    return {Kind::Multiclass, {"not harmful", "somewhat harmful", "very harmful"}};
}

LabelScheme LabelScheme::generic(std::size_t classes) {
    LabelScheme s{Kind::Generic, {}};
    for (std::size_t c = 0; c < classes; ++c) s.class_names.push_back("class" + std::to_string(c));
    return s;
}

std::string LabelScheme::name() const {
    switch (kind) {
        case Kind::Binary: return "binary";
        case Kind::Multiclass: return "multiclass";
        case Kind::Generic: return "generic";
    }
    return "?";
}

LabelScheme LabelScheme::parse(const std::string& name, std::size_t classes) {
    if (name == "binary") return binary();
    if (name == "multiclass") return multiclass();
    if (name == "generic") {
        if (classes < 2) throw DataError("generic label scheme needs at least 2 classes");
        return generic(classes);
    }
    throw DataError("unknown label scheme '" + name + "'");
}

std::vector<int> Dataset::labels() const {
    std::vector<int> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.label);
    return out;
}

bool Dataset::has_split_tags() const noexcept {
    return !records.empty() &&
           std::all_of(records.begin(), records.end(), [](const auto& r) { return r.split.has_value(); });
}

namespace {

bool finite(const Vector& v) {
    return std::all_of(v.begin(), v.end(), [](Scalar x) { return std::isfinite(x); });
}

}  // namespace

void Dataset::validate() const {
    if (dim == 0) throw DataError("dataset dimension must be positive");
    std::unordered_set<std::string> seen;
    const int classes = static_cast<int>(scheme.num_classes());
    for (const auto& r : records) {
        if (r.id.empty()) throw DataError("record with empty id");
        if (!seen.insert(r.id).second) throw DataError("duplicate record id '" + r.id + "'");
        if (r.image.size() != dim)
            throw DataError("record '" + r.id + "': image length " + std::to_string(r.image.size()) +
                            " != d " + std::to_string(dim));
        if (r.text && r.text->size() != dim)
            throw DataError("record '" + r.id + "': text length " + std::to_string(r.text->size()) +
                            " != d " + std::to_string(dim));
        if (!finite(r.image) || (r.text && !finite(*r.text)))
            throw DataError("record '" + r.id + "': non-finite embedding value");
        if (r.label < 0 || r.label >= classes)
            throw DataError("record '" + r.id + "': label " + std::to_string(r.label) +
                            " outside scheme " + scheme.name());
    }
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kStoreMagic = "MREB";

std::size_t header_size(std::size_t n) { return 4 + 4 + 4 + 4 + n; }

std::vector<std::uint64_t> record_offsets(const Dataset& ds) {
    std::vector<std::uint64_t> offsets;
    std::uint64_t pos = header_size(ds.size());
    for (const auto& r : ds.records) {
        offsets.push_back(pos);
        pos += 4 * ((r.text ? ds.dim : 0) + ds.dim);
    }
    return offsets;
}

}  // namespace

std::string store_bytes(const Dataset& ds) {
    if (ds.size() > 0xFFFFFFFFu || ds.dim > 0xFFFFFFFFu) throw DataError("dataset too large for store");
    detail::ByteWriter w;
    w.bytes(kStoreMagic);
    w.uint(kStoreVersion);
    w.uint(static_cast<std::uint32_t>(ds.size()));
    w.uint(static_cast<std::uint32_t>(ds.dim));
    for (const auto& r : ds.records) w.uint(static_cast<std::uint8_t>(r.text ? 1 : 0));
    for (const auto& r : ds.records) {
        if (r.text) w.floats(*r.text);
        w.floats(r.image);
    }
    return std::move(w.str());
}

void write_dataset(const Dataset& ds, const std::string& manifest_path, const std::string& store_path) {
    ds.validate();
    detail::write_file(store_path, store_bytes(ds));

    const auto offsets = record_offsets(ds);
    json records = json::array();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& r = ds.records[i];
        json e = {{"id", r.id},
                  {"label", r.label},
                  {"offset", offsets[i]},
                  {"text", r.text.has_value()},
                  {"text_len", r.text ? ds.dim : 0},
                  {"image_len", ds.dim}};
        if (r.split) e["split"] = to_string(*r.split);
        records.push_back(std::move(e));
    }
    const fs::path manifest_dir = fs::absolute(fs::path(manifest_path)).parent_path();
    const fs::path store_rel = fs::absolute(fs::path(store_path)).lexically_relative(manifest_dir);
    json m = {{"format", "sharedrep-manifest"},
              {"version", 1},
              {"name", ds.name},
              {"dim", ds.dim},
              {"scheme", ds.scheme.name()},
              {"classes", ds.scheme.class_names},
              {"encoder", ds.encoder},
              {"store", store_rel.generic_string()},
              {"records", std::move(records)}};
    detail::write_file(manifest_path, m.dump(1) + "\n");
}

Dataset load_dataset(const std::string& manifest_path) {
    json m;
    try {
        m = json::parse(detail::read_file(manifest_path));
    } catch (const json::exception& e) {
        throw LoadError(manifest_path + ": " + e.what());
    }

    Dataset ds;
    std::string store_name;
    json entries;
    try {
        if (m.value("format", "") != "sharedrep-manifest")
            throw LoadError(manifest_path + ": not a sharedrep manifest");
        ds.name = m.value("name", "");
        ds.dim = m.at("dim").get<std::size_t>();
        const auto classes = m.contains("classes") ? m["classes"].size() : std::size_t{0};
        ds.scheme = LabelScheme::parse(m.at("scheme").get<std::string>(), classes);
        ds.encoder = m.value("encoder", "");
        store_name = m.at("store").get<std::string>();
        entries = m.at("records");
    } catch (const json::exception& e) {
        throw LoadError(manifest_path + ": " + e.what());
    } catch (const DataError& e) {
        throw LoadError(manifest_path + ": " + e.what());
    }

    fs::path store_path = store_name;
    if (store_path.is_relative()) store_path = fs::path(manifest_path).parent_path() / store_path;
    const std::string bytes = detail::read_file(store_path.string());
    detail::ByteReader r(bytes, store_path.string());

    if (r.bytes(4) != kStoreMagic) throw LoadError(store_path.string() + ": bad magic (expected MREB)");
    if (const auto v = r.uint<std::uint32_t>(); v != kStoreVersion)
        throw LoadError(store_path.string() + ": unsupported store version " + std::to_string(v));
    const std::size_t n = r.uint<std::uint32_t>();
    const std::size_t d = r.uint<std::uint32_t>();
    if (d != ds.dim)
        throw LoadError("store d " + std::to_string(d) + " != manifest d " + std::to_string(ds.dim));
    if (n != entries.size())
        throw LoadError("store holds " + std::to_string(n) + " records, manifest lists " +
                        std::to_string(entries.size()));
    std::vector<std::uint8_t> flags(n);
    for (auto& f : flags) f = r.uint<std::uint8_t>();

    std::unordered_set<std::string> seen;
    ds.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const json& e = entries[i];
        EmbeddingRecord rec;
        std::uint64_t offset = 0;
        try {
            rec.id = e.at("id").get<std::string>();
            rec.label = e.at("label").get<int>();
            offset = e.at("offset").get<std::uint64_t>();
            if (e.contains("split") && !e["split"].is_null())
                rec.split = parse_split(e["split"].get<std::string>());
        } catch (const json::exception& ex) {
            throw LoadError("manifest record " + std::to_string(i) + ": " + ex.what());
        } catch (const DataError& ex) {
            throw LoadError("record '" + rec.id + "': " + ex.what());
        }
        const auto fail = [&](const std::string& why) { throw LoadError("record '" + rec.id + "': " + why); };
        if (!seen.insert(rec.id).second) fail("duplicate id");
        const bool has_text = (flags[i] & 1u) != 0;
        if (e.contains("text") && e["text"].get<bool>() != has_text)
            fail("manifest text flag disagrees with store flags");
        const std::size_t text_len = e.value("text_len", has_text ? d : 0);
        const std::size_t image_len = e.value("image_len", d);
        if (has_text && text_len != d)
            fail("text length " + std::to_string(text_len) + " != d " + std::to_string(d));
        if (!has_text && text_len != 0) fail("text length given for a text-absent record");
        if (image_len != d) fail("image length " + std::to_string(image_len) + " != d " + std::to_string(d));
        if (rec.label < 0 || static_cast<std::size_t>(rec.label) >= ds.scheme.num_classes())
            fail("label " + std::to_string(rec.label) + " outside scheme " + ds.scheme.name());

        r.seek(static_cast<std::size_t>(offset));
        if (has_text) {
            rec.text = Vector(d);
            r.floats(*rec.text);
        }
        rec.image = Vector(d);
        r.floats(rec.image);
        if (!finite(rec.image) || (rec.text && !finite(*rec.text))) fail("non-finite embedding value");
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

std::uint64_t dataset_fingerprint(const Dataset& ds) {
    std::uint64_t h = detail::fnv1a64(store_bytes(ds));
    for (const auto& r : ds.records) {
        h = detail::fnv1a64(r.id, h);
        h = detail::fnv1a64(std::to_string(r.label) + (r.split ? to_string(*r.split) : "-"), h);
    }
    return detail::fnv1a64(ds.scheme.name(), h);
}

// ---------------------------------------------------------------------------

Dataset to_binary_labels(Dataset ds) {
    if (ds.scheme.kind == LabelScheme::Kind::Binary) return ds;
    if (ds.scheme.kind != LabelScheme::Kind::Multiclass)
        throw DataError("binary mapping needs the 3-class harmfulness scheme");
    for (auto& r : ds.records) {
        if (r.label < 0 || r.label > 2)
            throw DataError("record '" + r.id + "': unknown label " + std::to_string(r.label));
        r.label = r.label == 0 ? 0 : 1;
    }
    ds.scheme = LabelScheme::binary();
    return ds;
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
    Dataset out;
    out.name = ds.name;
    out.dim = ds.dim;
    out.scheme = ds.scheme;
    out.encoder = ds.encoder;
    out.records.reserve(indices.size());
    for (std::size_t i : indices) out.records.push_back(ds.records.at(i));
    return out;
}

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(std::span<const int> labels);

}  // namespace

Dataset with_split_tags(Dataset ds, double train_frac, double val_frac, std::uint64_t seed) {
    if (!(train_frac > 0 && val_frac >= 0 && train_frac + val_frac < 1))
        throw ConfigError("split fractions must satisfy train > 0, val >= 0, train + val < 1");
    const auto labels = ds.labels();
    auto by_class = indices_by_class(labels);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        Rng rng = Rng::stream(seed, 0x73706C6974ULL + c);
        rng.shuffle(std::span<std::size_t>(members));
        const auto n = static_cast<double>(members.size());
        const auto n_train = static_cast<std::size_t>(std::llround(train_frac * n));
        const auto n_val = static_cast<std::size_t>(std::llround(val_frac * n));
        for (std::size_t r = 0; r < members.size(); ++r) {
            auto& rec = ds.records[members[r]];
            rec.split = r < n_train ? Split::Train : r < n_train + n_val ? Split::Val : Split::Test;
        }
    }
    return ds;
}

namespace {

void normalize_in_place(Vector& v) {
    double sq = 0.0;
    for (Scalar x : v) sq += static_cast<double>(x) * x;
    if (sq <= 0.0) return;
    const double inv = 1.0 / std::sqrt(sq);
    for (Scalar& x : v) x = static_cast<Scalar>(x * inv);
}

}  // namespace

Dataset l2_normalized(Dataset ds) {
    for (auto& r : ds.records) {
        normalize_in_place(r.image);
        if (r.text) normalize_in_place(*r.text);
    }
    return ds;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<std::size_t>> indices_by_class(std::span<const int> labels) {
    int max_label = -1;
    for (int y : labels) {
        if (y < 0) throw DataError("negative label " + std::to_string(y));
        max_label = std::max(max_label, y);
    }
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(max_label + 1));
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    return by_class;
}

}  // namespace

KFoldResult kfold_split(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("kfold: k must be at least 2");
    if (labels.size() < k)
        throw ConfigError("kfold: " + std::to_string(labels.size()) + " records for " +
                          std::to_string(k) + " folds");
    KFoldResult result;
    auto by_class = indices_by_class(labels);
    std::vector<std::vector<std::size_t>> val(k);
    std::size_t deal = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& members = by_class[c];
        if (members.empty()) continue;
        if (members.size() < k)
            result.warnings.push_back("class " + std::to_string(c) + " has " +
                                      std::to_string(members.size()) + " members for " +
                                      std::to_string(k) + " folds");
        Rng rng = Rng::stream(seed, c);
        rng.shuffle(std::span<std::size_t>(members));
        for (std::size_t idx : members) {
            val[deal].push_back(idx);
            deal = (deal + 1) % k;
        }
    }
    for (std::size_t f = 0; f < k; ++f) {
        Fold fold;
        fold.validation = val[f];
        std::sort(fold.validation.begin(), fold.validation.end());
        for (std::size_t g = 0; g < k; ++g)
            if (g != f) fold.train.insert(fold.train.end(), val[g].begin(), val[g].end());
        std::sort(fold.train.begin(), fold.train.end());
        result.folds.push_back(std::move(fold));
    }
    return result;
}

// ---------------------------------------------------------------------------

bool is_supported_level(int level) noexcept {
    return std::find(kAvailabilityLevels.begin(), kAvailabilityLevels.end(), level) !=
           kAvailabilityLevels.end();
}

std::size_t AvailabilityMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(text_present.begin(), text_present.end(), true));
}

std::vector<std::size_t> stratified_keep_counts(std::span<const std::size_t> class_counts, int level) {
    if (level < 0 || level > 100) throw ConfigError("availability level outside [0, 100]");
    const auto lv = static_cast<std::size_t>(level);
    std::size_t total_n = 0;
    std::vector<std::size_t> keep(class_counts.size());
    std::vector<std::size_t> remainder(class_counts.size());
    std::size_t kept = 0;
    for (std::size_t c = 0; c < class_counts.size(); ++c) {
        total_n += class_counts[c];
        keep[c] = lv * class_counts[c] / 100;
        remainder[c] = lv * class_counts[c] % 100;
        kept += keep[c];
    }
    // round half up
    const std::size_t target = (lv * total_n + 50) / 100;
    std::vector<std::size_t> order(class_counts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; kept < target && i < order.size(); ++i) {
        const std::size_t c = order[i];
        if (remainder[c] == 0) continue;
        ++keep[c];
        ++kept;
    }
    return keep;
}

AvailabilityMask apply_availability_mask(std::span<const int> labels,
                                         const std::vector<bool>& text_stored, int level,
                                         std::uint64_t seed) {
    if (!is_supported_level(level))
        throw ConfigError("availability level " + std::to_string(level) +
                          " not in {100, 90, 70, 50, 30, 10, 0}");
    require_shape(text_stored.size() == labels.size(), "mask: text flags differ from label count");
    AvailabilityMask mask;
    mask.level = level;
    mask.seed = seed;
    mask.text_present.assign(labels.size(), false);
    if (labels.empty()) return mask;

    auto by_class = indices_by_class(labels);
    std::vector<std::size_t> counts;
    for (const auto& members : by_class) counts.push_back(members.size());
    const auto keep = stratified_keep_counts(counts, level);

    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& ranking = by_class[c];
        Rng rng = Rng::stream(seed, 0x6D61736B00000000ULL + c);
        rng.shuffle(std::span<std::size_t>(ranking));
        std::stable_partition(ranking.begin(), ranking.end(),
                              [&](std::size_t i) { return bool(text_stored[i]); });
        for (std::size_t r = 0; r < keep[c]; ++r)
            if (text_stored[ranking[r]]) mask.text_present[ranking[r]] = true;
    }
    return mask;
}

AvailabilityMask apply_availability_mask(std::span<const EmbeddingRecord> records, int level,
                                         std::uint64_t seed) {
    std::vector<int> labels;
    std::vector<bool> stored;
    for (const auto& r : records) {
        labels.push_back(r.label);
        stored.push_back(r.text.has_value());
    }
    return apply_availability_mask(labels, stored, level, seed);
}

ModalBatch make_batch(std::span<const EmbeddingRecord> records, std::span<const std::size_t> indices,
                      const AvailabilityMask* mask) {
    if (indices.empty()) throw UsageError("empty batch");
    const std::size_t d = records[indices[0]].image.size();
    ModalBatch b;
    b.image = Matrix(indices.size(), d);
    b.text_present.assign(indices.size(), false);
    b.labels.resize(indices.size());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        const auto& r = records[i];
        require_shape(r.image.size() == d, "record '" + r.id + "' has a different dimension");
        std::copy(r.image.begin(), r.image.end(), b.image.row(k).begin());
        b.labels[k] = r.label;
        const bool allowed = mask == nullptr || mask->text_present.at(i);
        if (r.text && allowed) {
            if (!b.text) b.text = Matrix(indices.size(), d);
            std::copy(r.text->begin(), r.text->end(), b.text->row(k).begin());
            b.text_present[k] = true;
        }
    }
    return b;
}

ModalBatch make_batch(std::span<const EmbeddingRecord> records, const AvailabilityMask* mask) {
    std::vector<std::size_t> all(records.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return make_batch(records, all, mask);
}

// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
    if (classes < 2) throw ConfigError("synth: need at least 2 classes");
    if (per_class < 1) throw ConfigError("synth: per-class count must be positive");
    if (dim < 2) throw ConfigError("synth: dimension must be at least 2");
    if (!(sigma > 0)) throw ConfigError("synth: sigma must be positive");
    if (!(rho_text >= 0 && rho_text <= 1) || !(rho_image >= 0 && rho_image <= 1))
        throw ConfigError("synth: rho values must be in [0, 1]");
}

namespace {

Vector unit_gaussian(std::size_t d, Rng& rng) {
    Vector v(d);
    double sq = 0.0;
    do {
        sq = 0.0;
        for (Scalar& x : v) {
            x = static_cast<Scalar>(rng.normal());
            sq += static_cast<double>(x) * x;
        }
    } while (sq == 0.0);
    normalize_in_place(v);
    return v;
}

Vector noisy(const Vector& proto, double rho, double sigma, Rng& rng) {
    Vector v(proto.size());
    for (std::size_t j = 0; j < v.size(); ++j)
        v[j] = static_cast<Scalar>(rho * proto[j] + sigma * rng.normal());
    normalize_in_place(v);
    return v;
}

}  // namespace

SynthDataset synth_generate_with_prototypes(const SynthSpec& spec) {
    spec.validate();
    SynthDataset out;
    Dataset& ds = out.data;
    ds.name = "synthetic";
    ds.dim = spec.dim;
    ds.scheme = spec.classes == 2   ? LabelScheme::binary()
                : spec.classes == 3 ? LabelScheme::multiclass()
                                    : LabelScheme::generic(spec.classes);
    ds.encoder = "synthetic";

    Rng proto_rng = Rng::stream(spec.seed, 1);
    for (std::size_t c = 0; c < spec.classes; ++c) {
        out.text_prototypes.push_back(unit_gaussian(spec.dim, proto_rng));
        out.image_prototypes.push_back(unit_gaussian(spec.dim, proto_rng));
    }
    Rng sample_rng = Rng::stream(spec.seed, 2);
    const std::size_t width = std::to_string(spec.classes * spec.per_class).size();
    for (std::size_t i = 0; i < spec.per_class; ++i) {
        for (std::size_t c = 0; c < spec.classes; ++c) {
            EmbeddingRecord r;
            std::string num = std::to_string(ds.records.size());
            r.id = "synth-" + std::string(width - num.size(), '0') + num;
            r.label = static_cast<int>(c);
            r.text = noisy(out.text_prototypes[c], spec.rho_text, spec.sigma, sample_rng);
            r.image = noisy(out.image_prototypes[c], spec.rho_image, spec.sigma, sample_rng);
            ds.records.push_back(std::move(r));
        }
    }
    return out;
}

Dataset synth_generate(const SynthSpec& spec) { return synth_generate_with_prototypes(spec).data; }

}  // namespace sharedrep
