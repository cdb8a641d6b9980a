#include "sharedrep/model.hpp"

#include <cmath>

#include "binary_io.hpp"

namespace sharedrep {

const char* to_string(Variant v) noexcept { return v == Variant::SR ? "SR" : "FR"; }

Variant parse_variant(const std::string& s) {
    if (s == "SR" || s == "sr") return Variant::SR;
    if (s == "FR" || s == "fr") return Variant::FR;
    throw ConfigError("unknown model variant '" + s + "' (expected SR or FR)");
}

namespace {

Matrix uniform_matrix(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
    Matrix m(rows, cols);
    for (Scalar& v : m.values()) v = static_cast<Scalar>(rng.uniform(-bound, bound));
    return m;
}


}  // namespace

StackParams StackParams::init(std::size_t input_dim, const ModelDims& dims, Rng& rng) {
    StackParams p = zeros(input_dim, dims);
    p.block1.weight = uniform_matrix(input_dim, dims.hidden1, 1.0 / std::sqrt(double(input_dim)), rng);
    p.block2.weight =
        uniform_matrix(dims.hidden1, dims.hidden2, 1.0 / std::sqrt(double(dims.hidden1)), rng);
    const double head_bound = 1.0 / std::sqrt(double(dims.hidden2));
    p.head_weight = uniform_matrix(dims.hidden2, dims.classes, head_bound, rng);
    for (Scalar& b : p.head_bias) b = static_cast<Scalar>(rng.uniform(-head_bound, head_bound));
    return p;
}

StackParams StackParams::zeros(std::size_t input_dim, const ModelDims& dims) {
    if (input_dim == 0 || dims.hidden1 == 0 || dims.hidden2 == 0)
        throw ConfigError("model dimensions must be positive");
    if (dims.classes < 2) throw ConfigError("model needs at least 2 classes");
    if (!(dims.dropout >= 0 && dims.dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
    StackParams p;
    p.block1.weight = Matrix(input_dim, dims.hidden1);
    p.block1.bn = BatchNormState::identity(dims.hidden1, dims.bn_eps, dims.bn_momentum);
    p.block2.weight = Matrix(dims.hidden1, dims.hidden2);
    p.block2.bn = BatchNormState::identity(dims.hidden2, dims.bn_eps, dims.bn_momentum);
    p.head_weight = Matrix(dims.hidden2, dims.classes);
    p.head_bias.assign(dims.classes, Scalar{0});
    p.dropout_rate = dims.dropout;
    return p;
}

void StackParams::validate() const {
    block1.bn.validate();
    block2.bn.validate();
    require_shape(block1.weight.cols() == block1.bn.features(), "block1 weight/bn mismatch");
    require_shape(block2.weight.rows() == block1.weight.cols(), "block2 input mismatch");
    require_shape(block2.weight.cols() == block2.bn.features(), "block2 weight/bn mismatch");
    require_shape(head_weight.rows() == block2.weight.cols(), "head input mismatch");
    require_shape(head_bias.size() == head_weight.cols(), "head bias mismatch");
}

std::vector<ParamRef> StackParams::parameters() {
    return {
        {"block1.weight", block1.weight.values(), true},
        {"block1.bn.gamma", block1.bn.gamma, false},
        {"block1.bn.beta", block1.bn.beta, false},
        {"block2.weight", block2.weight.values(), true},
        {"block2.bn.gamma", block2.bn.gamma, false},
        {"block2.bn.beta", block2.bn.beta, false},
        {"head.weight", head_weight.values(), true},
        {"head.bias", head_bias, false},
    };
}

StackGrads StackGrads::zeros_like(const StackParams& p) {
    StackGrads g;
    g.w1 = Matrix(p.block1.weight.rows(), p.block1.weight.cols());
    g.gamma1.assign(p.block1.bn.features(), Scalar{0});
    g.beta1.assign(p.block1.bn.features(), Scalar{0});
    g.w2 = Matrix(p.block2.weight.rows(), p.block2.weight.cols());
    g.gamma2.assign(p.block2.bn.features(), Scalar{0});
    g.beta2.assign(p.block2.bn.features(), Scalar{0});
    g.head_w = Matrix(p.head_weight.rows(), p.head_weight.cols());
    g.head_b.assign(p.head_bias.size(), Scalar{0});
    return g;
}

std::vector<std::span<Scalar>> StackGrads::spans() {
    return {w1.values(), gamma1, beta1, w2.values(), gamma2, beta2, head_w.values(), head_b};
}

void StackGrads::accumulate(const StackGrads& other) {
    auto mine = spans();
    auto theirs = const_cast<StackGrads&>(other).spans();
    for (std::size_t k = 0; k < mine.size(); ++k) {
        require_shape(mine[k].size() == theirs[k].size(), "gradient accumulate shape mismatch");
        for (std::size_t i = 0; i < mine[k].size(); ++i) mine[k][i] += theirs[k][i];
    }
}

// ---------------------------------------------------------------------------

namespace {

Matrix block_forward(Block& block, const Matrix& x, Mode mode, Rng* rng, Scalar rate,
                     BlockTape* tape) {
    Matrix z = linear_forward(x, block.weight, {});
    Matrix bn_out = batchnorm_forward(z, block.bn, mode, tape ? &tape->bn : nullptr);
    DropoutResult d = dropout(relu(bn_out), rate, rng, mode);
    if (tape) {
        tape->input = x;
        tape->bn_out = std::move(bn_out);
        tape->dropout_mask = std::move(d.mask);
    }
    return std::move(d.y);
}

Matrix block_inference(const Block& block, const Matrix& x) {
    return relu(batchnorm_inference(linear_forward(x, block.weight, {}), block.bn));
}

Matrix block_backward(const Block& block, const BlockTape& tape, const Matrix& dy, Matrix& dw,
                      Vector& dgamma, Vector& dbeta) {
    Matrix d = relu_backward(dropout_backward(dy, tape.dropout_mask), tape.bn_out);
    BatchNormGrads bn = batchnorm_backward(d, tape.bn, block.bn.gamma);
    LinearGrads lin = linear_backward(bn.dx, tape.input, block.weight, false);
    dw = std::move(lin.dw);
    dgamma = std::move(bn.dgamma);
    dbeta = std::move(bn.dbeta);
    return std::move(lin.dx);
}

}  // namespace

StackForward shared_stack_forward(StackParams& params, const Matrix& x, Mode mode, Rng* rng) {
    require_shape(x.cols() == params.input_dim(),
                  "stack input " + shape_string(x) + " vs input dim " +
                      std::to_string(params.input_dim()));
    if (mode == Mode::Eval) return {stack_inference(params, x), {}};
    StackForward out;
    const Scalar rate = params.dropout_rate;
    Matrix h1 = block_forward(params.block1, x, mode, rng, rate, &out.tape.block1);
    Matrix h2 = block_forward(params.block2, h1, mode, rng, rate, &out.tape.block2);
    out.logits = linear_forward(h2, params.head_weight, params.head_bias);
    out.tape.head_input = std::move(h2);
    out.tape.recorded = true;
    return out;
}

Matrix stack_inference(const StackParams& params, const Matrix& x) {
    require_shape(x.cols() == params.input_dim(),
                  "stack input " + shape_string(x) + " vs input dim " +
                      std::to_string(params.input_dim()));
    Matrix h = block_inference(params.block2, block_inference(params.block1, x));
    return linear_forward(h, params.head_weight, params.head_bias);
}

StackGrads stack_backward(const StackParams& params, StackTape& tape, const Matrix& dlogits) {
    if (!tape.recorded) throw UsageError("backward needs a train-mode forward tape");
    if (tape.consumed) throw UsageError("tape already used by a backward pass");
    tape.consumed = true;
    StackGrads g;
    LinearGrads head = linear_backward(dlogits, tape.head_input, params.head_weight, true);
    g.head_w = std::move(head.dw);
    g.head_b = std::move(head.db);
    Matrix d1 = block_backward(params.block2, tape.block2, head.dx, g.w2, g.gamma2, g.beta2);
    block_backward(params.block1, tape.block1, d1, g.w1, g.gamma1, g.beta1);
    return g;
}

// ---------------------------------------------------------------------------

std::size_t ModalBatch::text_count() const noexcept {
    std::size_t n = 0;
    for (bool b : text_present) n += b ? 1 : 0;
    return n;
}

void ModalBatch::validate() const {
    const std::size_t b = image.rows();
    require_shape(text_present.size() == b, "text_present length differs from batch size");
    require_shape(labels.empty() || labels.size() == b, "labels length differs from batch size");
    if (text_count() > 0) {
        if (!text) throw UsageError("batch marks text present but carries no text matrix");
        require_shape(text->rows() == b && text->cols() == image.cols(),
                      "text " + shape_string(*text) + " vs image " + shape_string(image));
    }
}

namespace {

void copy_row(const Matrix& src, std::size_t from, Matrix& dst, std::size_t to) {
    auto s = src.row(from);
    std::copy(s.begin(), s.end(), dst.row(to).begin());
}

}  // namespace

SrForward sr_forward(SharedStackParams& params, const ModalBatch& batch, Mode mode, Rng* rng,
                     BnPooling pooling) {
    batch.validate();
    const std::size_t b = batch.size();
    const std::size_t c = params.classes();
    const std::size_t d = batch.image.cols();

    SrForward out;
    out.tape.pooling = pooling;
    out.tape.batch = b;
    for (std::size_t i = 0; i < b; ++i)
        if (batch.text_present[i]) out.tape.text_rows.push_back(i);
    const auto& rows = out.tape.text_rows;
    const std::size_t t = rows.size();

    out.text_logits = Matrix(b, c);
    if (mode == Mode::Train && pooling == BnPooling::PerModality) {
        if (t > 0) {
            Matrix text(t, d);
            for (std::size_t k = 0; k < t; ++k) copy_row(*batch.text, rows[k], text, k);
            StackForward tf = shared_stack_forward(params, text, mode, rng);
            for (std::size_t k = 0; k < t; ++k) copy_row(tf.logits, k, out.text_logits, rows[k]);
            out.tape.text = std::move(tf.tape);
        }
        StackForward vf = shared_stack_forward(params, batch.image, mode, rng);
        out.image_logits = std::move(vf.logits);
        out.tape.image = std::move(vf.tape);
    } else {
        Matrix stacked(t + b, d);
        for (std::size_t k = 0; k < t; ++k) copy_row(*batch.text, rows[k], stacked, k);
        for (std::size_t i = 0; i < b; ++i) copy_row(batch.image, i, stacked, t + i);
        StackForward sf = shared_stack_forward(params, stacked, mode, rng);
        for (std::size_t k = 0; k < t; ++k) copy_row(sf.logits, k, out.text_logits, rows[k]);
        out.image_logits = Matrix(b, c);
        for (std::size_t i = 0; i < b; ++i) copy_row(sf.logits, t + i, out.image_logits, i);
        out.tape.pooled = std::move(sf.tape);
    }
    out.tape.recorded = mode == Mode::Train;

    out.fused = out.image_logits;
    for (std::size_t i : rows)
        for (std::size_t j = 0; j < c; ++j) out.fused(i, j) += out.text_logits(i, j);
    return out;
}

StackGrads sr_backward(const SharedStackParams& params, SrTape& tape, const Matrix& dfused) {
    if (!tape.recorded) throw UsageError("sr_backward needs a train-mode forward tape");
    if (tape.consumed) throw UsageError("tape already used by a backward pass");
    const std::size_t b = tape.batch;
    const std::size_t c = params.classes();
    require_shape(dfused.rows() == b && dfused.cols() == c,
                  "dlogits " + shape_string(dfused) + " does not match the forward batch");
    const auto& rows = tape.text_rows;
    const std::size_t t = rows.size();
    tape.consumed = true;

    if (tape.pooling == BnPooling::Pooled) {
        Matrix d(t + b, c);
        for (std::size_t k = 0; k < t; ++k) copy_row(dfused, rows[k], d, k);
        for (std::size_t i = 0; i < b; ++i) copy_row(dfused, i, d, t + i);
        return stack_backward(params, tape.pooled, d);
    }
    StackGrads g = stack_backward(params, tape.image, dfused);
    if (t > 0) {
        Matrix d(t, c);
        for (std::size_t k = 0; k < t; ++k) copy_row(dfused, rows[k], d, k);
        g.accumulate(stack_backward(params, tape.text, d));
    }
    return g;
}

Matrix fused_input(const ModalBatch& batch) {
    batch.validate();
    const std::size_t b = batch.size(), d = batch.image.cols();
    Matrix x(b, 2 * d);
    for (std::size_t i = 0; i < b; ++i) {
        auto dst = x.row(i);
        if (batch.text_present[i]) {
            auto t = batch.text->row(i);
            std::copy(t.begin(), t.end(), dst.begin());
        }
        auto v = batch.image.row(i);
        std::copy(v.begin(), v.end(), dst.begin() + static_cast<std::ptrdiff_t>(d));
    }
    return x;
}

StackForward fr_forward(FusedStackParams& params, const ModalBatch& batch, Mode mode, Rng* rng) {
    return shared_stack_forward(params, fused_input(batch), mode, rng);
}

std::vector<int> predict(const Matrix& logits) {
    if (logits.cols() < 2) throw UsageError("predict needs at least 2 classes");
    std::vector<int> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto row = logits.row(i);
        std::size_t best = 0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (std::isnan(row[j])) throw NumericError("NaN logit in row " + std::to_string(i));
            if (row[j] > row[best]) best = j;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

// ---------------------------------------------------------------------------

Model Model::create(Variant variant, const ModelDims& dims, Rng& rng) {
    if (dims.embed_dim == 0) throw ConfigError("embedding dimension must be positive");
    Model m;
    m.variant = variant;
    m.embed_dim = dims.embed_dim;
    const std::size_t input = variant == Variant::FR ? 2 * dims.embed_dim : dims.embed_dim;
    m.stack = StackParams::init(input, dims, rng);
    return m;
}

ModelDims Model::dims() const {
    ModelDims d;
    d.embed_dim = embed_dim;
    d.hidden1 = stack.block1.weight.cols();
    d.hidden2 = stack.block2.weight.cols();
    d.classes = stack.classes();
    d.dropout = stack.dropout_rate;
    d.bn_eps = stack.block1.bn.eps;
    d.bn_momentum = stack.block1.bn.momentum;
    return d;
}

namespace {

bool same_bn(const BatchNormState& a, const BatchNormState& b) {
    return a.gamma == b.gamma && a.beta == b.beta && a.running_mean == b.running_mean &&
           a.running_var == b.running_var && a.eps == b.eps && a.momentum == b.momentum;
}

}  // namespace

bool operator==(const Model& a, const Model& b) {
    const auto& s = a.stack;
    const auto& t = b.stack;
    return a.variant == b.variant && a.embed_dim == b.embed_dim &&
           s.block1.weight == t.block1.weight && same_bn(s.block1.bn, t.block1.bn) &&
           s.block2.weight == t.block2.weight && same_bn(s.block2.bn, t.block2.bn) &&
           s.head_weight == t.head_weight && s.head_bias == t.head_bias &&
           s.dropout_rate == t.dropout_rate;
}

Matrix infer_logits(const Model& model, const ModalBatch& batch) {
    batch.validate();
    if (batch.image.cols() != model.embed_dim)
        throw DimensionError("batch dim " + std::to_string(batch.image.cols()) + " vs model dim " +
                             std::to_string(model.embed_dim));
    if (model.variant == Variant::FR) return stack_inference(model.stack, fused_input(batch));

    // Eval-mode BN uses running statistics, so rows are independent and the
    // text and image passes can run separately.
    Matrix fused = stack_inference(model.stack, batch.image);
    const std::size_t t = batch.text_count();
    if (t == 0) return fused;
    Matrix text(t, model.embed_dim);
    std::vector<std::size_t> rows;
    rows.reserve(t);
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (batch.text_present[i]) {
            copy_row(*batch.text, i, text, rows.size());
            rows.push_back(i);
        }
    Matrix text_logits = stack_inference(model.stack, text);
    for (std::size_t k = 0; k < t; ++k)
        for (std::size_t j = 0; j < fused.cols(); ++j) fused(rows[k], j) += text_logits(k, j);
    return fused;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr std::string_view kCheckpointMagic = "MRSR";

constexpr std::uint32_t section_tag(const char (&s)[5]) {
    return std::uint32_t(std::uint8_t(s[0])) | std::uint32_t(std::uint8_t(s[1])) << 8 |
           std::uint32_t(std::uint8_t(s[2])) << 16 | std::uint32_t(std::uint8_t(s[3])) << 24;
}

constexpr std::uint32_t kParamsTag = section_tag("PARM");
constexpr std::uint32_t kAdamTag = section_tag("ADAM");

void write_bn(detail::ByteWriter& w, const BatchNormState& bn) {
    w.floats(bn.gamma);
    w.floats(bn.beta);
    w.floats(bn.running_mean);
    w.floats(bn.running_var);
}

void read_bn(detail::ByteReader& r, BatchNormState& bn) {
    r.floats(bn.gamma);
    r.floats(bn.beta);
    r.floats(bn.running_mean);
    r.floats(bn.running_var);
}

void write_section(detail::ByteWriter& w, std::uint32_t tag, detail::ByteWriter& payload) {
    w.uint(tag);
    w.uint(static_cast<std::uint64_t>(payload.size()));
    w.bytes(payload.str());
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > 0xFFFFFFFFu) throw ConfigError(std::string(what) + " too large for checkpoint");
    return static_cast<std::uint32_t>(v);
}

}  // namespace

std::string serialize_checkpoint(const Model& model, const AdamWState* optimizer) {
    const ModelDims dims = model.dims();
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic);
    w.uint(kCheckpointVersion);
    w.uint(static_cast<std::uint8_t>(model.variant == Variant::SR ? 0 : 1));
    w.uint(checked_u32(dims.embed_dim, "d"));
    w.uint(checked_u32(dims.hidden1, "h1"));
    w.uint(checked_u32(dims.hidden2, "h2"));
    w.uint(checked_u32(dims.classes, "C"));
    w.f32(static_cast<float>(dims.dropout));

    detail::ByteWriter params;
    const StackParams& s = model.stack;
    params.f32(static_cast<float>(s.block1.bn.eps));
    params.f32(static_cast<float>(s.block1.bn.momentum));
    params.floats(s.block1.weight.values());
    write_bn(params, s.block1.bn);
    params.floats(s.block2.weight.values());
    write_bn(params, s.block2.bn);
    params.floats(s.head_weight.values());
    params.floats(s.head_bias);
    write_section(w, kParamsTag, params);

    if (optimizer) {
        detail::ByteWriter adam;
        adam.uint(optimizer->step);
        for (double c : {optimizer->config.beta1, optimizer->config.beta2, optimizer->config.eps,
                         optimizer->config.weight_decay})
            adam.uint(std::bit_cast<std::uint64_t>(c));
        adam.uint(checked_u32(optimizer->m.size(), "parameter count"));
        for (std::size_t k = 0; k < optimizer->m.size(); ++k) {
            adam.uint(static_cast<std::uint64_t>(optimizer->m[k].size()));
            adam.floats(optimizer->m[k]);
            adam.floats(optimizer->v[k]);
        }
        write_section(w, kAdamTag, adam);
    }
    return std::move(w.str());
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes, "checkpoint");
    if (r.bytes(4) != kCheckpointMagic) throw LoadError("checkpoint: bad magic (expected MRSR)");
    const auto version = r.uint<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw LoadError("checkpoint: unsupported version " + std::to_string(version));
    const auto variant_byte = r.uint<std::uint8_t>();
    if (variant_byte > 1) throw LoadError("checkpoint: unknown variant " + std::to_string(variant_byte));

    ModelDims dims;
    dims.embed_dim = r.uint<std::uint32_t>();
    dims.hidden1 = r.uint<std::uint32_t>();
    dims.hidden2 = r.uint<std::uint32_t>();
    dims.classes = r.uint<std::uint32_t>();
    dims.dropout = static_cast<Scalar>(r.f32());

    Checkpoint ck;
    bool have_params = false;
    while (r.remaining() > 0) {
        const auto tag = r.uint<std::uint32_t>();
        const auto length = r.uint<std::uint64_t>();
        if (length > r.remaining()) throw LoadError("checkpoint: section overruns file");
        detail::ByteReader s(r.bytes(static_cast<std::size_t>(length)), "checkpoint section");
        if (tag == kParamsTag) {
            dims.bn_eps = static_cast<Scalar>(s.f32());
            dims.bn_momentum = static_cast<Scalar>(s.f32());
            Model& m = ck.model;
            m.variant = variant_byte == 0 ? Variant::SR : Variant::FR;
            m.embed_dim = dims.embed_dim;
            const std::size_t input = m.variant == Variant::FR ? 2 * dims.embed_dim : dims.embed_dim;
            m.stack = StackParams::zeros(input, dims);
            s.floats(m.stack.block1.weight.values());
            read_bn(s, m.stack.block1.bn);
            s.floats(m.stack.block2.weight.values());
            read_bn(s, m.stack.block2.bn);
            s.floats(m.stack.head_weight.values());
            s.floats(m.stack.head_bias);
            if (s.remaining() != 0) throw LoadError("checkpoint: parameter section has trailing bytes");
            m.stack.validate();
            have_params = true;
        } else if (tag == kAdamTag) {
            AdamWState st;
            st.step = s.uint<std::uint64_t>();
            st.config.beta1 = std::bit_cast<double>(s.uint<std::uint64_t>());
            st.config.beta2 = std::bit_cast<double>(s.uint<std::uint64_t>());
            st.config.eps = std::bit_cast<double>(s.uint<std::uint64_t>());
            st.config.weight_decay = std::bit_cast<double>(s.uint<std::uint64_t>());
            const auto count = s.uint<std::uint32_t>();
            for (std::uint32_t k = 0; k < count; ++k) {
                const auto n = s.uint<std::uint64_t>();
                if (n * 8 > s.remaining()) throw LoadError("checkpoint: optimizer slot overruns section");
                st.m.emplace_back(n);
                st.v.emplace_back(n);
                s.floats(st.m.back());
                s.floats(st.v.back());
            }
            ck.optimizer = std::move(st);
        }
        // Unknown sections are skipped.
    }
    if (!have_params) throw LoadError("checkpoint: missing parameter section");
    return ck;
}

void save_checkpoint(const std::string& path, const Model& model, const AdamWState* optimizer) {
    detail::write_file(path, serialize_checkpoint(model, optimizer));
}

Checkpoint load_checkpoint(const std::string& path) {
    return deserialize_checkpoint(detail::read_file(path));
}

}  // namespace sharedrep
