#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sharedrep/layers.hpp"
#include "sharedrep/optim.hpp"

namespace sharedrep {

enum class Variant { SR, FR };

const char* to_string(Variant v) noexcept;
Variant parse_variant(const std::string& s);

/// Architecture hyperparameters. `embed_dim` is the per-modality embedding
/// size d; the FR stack takes 2d inputs.
struct ModelDims {
    std::size_t embed_dim = 0;
    std::size_t hidden1 = 512;
    std::size_t hidden2 = 256;
    std::size_t classes = 2;
    Scalar dropout = Scalar(0.2);
    Scalar bn_eps = Scalar(1e-5);
    Scalar bn_momentum = Scalar(0.1);
};

/// FC -> BN -> ReLU -> dropout. The FC has no bias: batch norm subtracts the
/// per-feature mean, so a bias here is unidentifiable and receives an exactly
/// zero gradient; beta provides the shift.
struct Block {
    Matrix weight;  // [in x out]
    BatchNormState bn;
};

/// Two blocks plus a linear head emitting logits.
struct StackParams {
    Block block1;
    Block block2;
    Matrix head_weight;  // [h2 x C]
    Vector head_bias;    // [C]
    Scalar dropout_rate = Scalar(0.2);

    std::size_t input_dim() const noexcept { return block1.weight.rows(); }
    std::size_t classes() const noexcept { return head_weight.cols(); }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, identity BN.
    static StackParams init(std::size_t input_dim, const ModelDims& dims, Rng& rng);
    /// All weights and biases zero, identity BN.
    static StackParams zeros(std::size_t input_dim, const ModelDims& dims);

    void validate() const;
    /// Trainable tensors in declaration order.
    std::vector<ParamRef> parameters();
};

/// Shared representation: one stack serves both modalities.
using SharedStackParams = StackParams;
/// Fused representation: one stack over the concatenation [text ; image].
using FusedStackParams = StackParams;

struct StackGrads {
    Matrix w1;
    Vector gamma1, beta1;
    Matrix w2;
    Vector gamma2, beta2;
    Matrix head_w;
    Vector head_b;

    static StackGrads zeros_like(const StackParams& p);
    void accumulate(const StackGrads& other);
    /// Mutable views in the same order as StackParams::parameters().
    std::vector<std::span<Scalar>> spans();
};

struct BlockTape {
    Matrix input;
    BatchNormCache bn;
    Matrix bn_out;
    Matrix dropout_mask;
};

/// Activations cached by one train-mode stack forward; consumed by exactly
/// one backward call.
struct StackTape {
    BlockTape block1;
    BlockTape block2;
    Matrix head_input;
    bool recorded = false;
    bool consumed = false;
};

struct StackForward {
    Matrix logits;
    StackTape tape;
};

/// head(block2(block1(X))). Train mode updates BN running statistics and
/// records a tape; eval mode leaves params untouched and records nothing.
StackForward shared_stack_forward(StackParams& params, const Matrix& x, Mode mode, Rng* rng);

/// Eval-mode forward on const parameters.
Matrix stack_inference(const StackParams& params, const Matrix& x);

StackGrads stack_backward(const StackParams& params, StackTape& tape, const Matrix& dlogits);

// ---------------------------------------------------------------------------

/// A batch of records; the image modality is always present, text may be
/// missing per row. Absent text rows are never read.
struct ModalBatch {
    std::optional<Matrix> text;  // [B x d]
    Matrix image;                // [B x d]
    std::vector<bool> text_present;
    std::vector<int> labels;

    std::size_t size() const noexcept { return image.rows(); }
    std::size_t text_count() const noexcept;
    void validate() const;
};

enum class BnPooling {
    Pooled,       // one train-mode pass over text and image rows together
    PerModality,  // separate passes, separate batch statistics
};

struct SrTape {
    BnPooling pooling = BnPooling::Pooled;
    std::size_t batch = 0;
    std::vector<std::size_t> text_rows;  // batch index of each text row in the pass
    StackTape pooled;                    // text rows first, then all image rows
    StackTape text;
    StackTape image;
    bool recorded = false;
    bool consumed = false;
};

struct SrForward {
    Matrix fused;         // [B x C]
    Matrix text_logits;   // [B x C]; rows with absent text are zero
    Matrix image_logits;  // [B x C]
    SrTape tape;
};

/// Per-modality logits from the shared stack, summed where text is present,
/// image logits alone where it is absent.
SrForward sr_forward(SharedStackParams& params, const ModalBatch& batch, Mode mode, Rng* rng,
                     BnPooling pooling = BnPooling::Pooled);

/// Gradients of the shared parameters; both branches receive dfused on
/// text-present rows.
StackGrads sr_backward(const SharedStackParams& params, SrTape& tape, const Matrix& dfused);

/// Rows are [text_i or zeros ; image_i].
Matrix fused_input(const ModalBatch& batch);

StackForward fr_forward(FusedStackParams& params, const ModalBatch& batch, Mode mode, Rng* rng);

/// Row-wise argmax, lowest index on ties.
std::vector<int> predict(const Matrix& logits);

// ---------------------------------------------------------------------------

struct Model {
    Variant variant = Variant::SR;
    std::size_t embed_dim = 0;
    StackParams stack;

    static Model create(Variant variant, const ModelDims& dims, Rng& rng);
    ModelDims dims() const;

    friend bool operator==(const Model&, const Model&);
};

/// Eval-mode logits (SR: logit sum with image fallback, FR: zero imputation).
Matrix infer_logits(const Model& model, const ModalBatch& batch);

// ---------------------------------------------------------------------------
// Checkpoint container: "MRSR" header then tagged sections.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(const Model& model, const AdamWState* optimizer = nullptr);

struct Checkpoint {
    Model model;
    std::optional<AdamWState> optimizer;
};

Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const Model& model,
                     const AdamWState* optimizer = nullptr);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sharedrep
