// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "echoloc/audio.hpp"
#include "echoloc/dataset.hpp"
#include "echoloc/types.hpp"

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <vector>

namespace echoloc {

// Activations are row-major batches: one sample per row, features flattened
// (channel-major for spatial layers). All layers run in double precision;
// the model file stores float32.

using Batch = Eigen::MatrixXd;

class Layer {
public:
    virtual ~Layer() = default;
    virtual Batch forward(const Batch& x, bool training) = 0;
    virtual Batch backward(const Batch& dy) = 0;
    virtual std::string kind() const = 0;

    Eigen::VectorXd params;  // empty for parameterless layers
    Eigen::VectorXd grads;
};

class DenseLayer : public Layer {
public:
    DenseLayer(int in_features, int out_features);
    Batch forward(const Batch& x, bool training) override;
    Batch backward(const Batch& dy) override;
    std::string kind() const override { return "dense"; }

    int in_features() const { return in_; }
    int out_features() const { return out_; }

private:
    int in_, out_;
    Batch cached_input_;
};

/// Stride-1 "same" convolution over channel-major [C x H x W] rows.
class Conv2dLayer : public Layer {
public:
    Conv2dLayer(int in_channels, int out_channels, int kernel, int height,
                int width);
    Batch forward(const Batch& x, bool training) override;
    Batch backward(const Batch& dy) override;
    std::string kind() const override { return "conv"; }

    int out_size() const { return out_channels_ * height_ * width_; }

private:
    Eigen::MatrixXd im2col(const Eigen::VectorXd& sample) const;

    int in_channels_, out_channels_, kernel_, height_, width_, pad_;
    Batch cached_input_;
};

class MaxPool2Layer : public Layer {
public:
    MaxPool2Layer(int channels, int height, int width, int pool);
    Batch forward(const Batch& x, bool training) override;
    Batch backward(const Batch& dy) override;
    std::string kind() const override { return "pool"; }

    int out_size() const {
        return channels_ * (height_ / pool_) * (width_ / pool_);
    }

private:
    int channels_, height_, width_, pool_;
    Eigen::MatrixXi argmax_;
    Eigen::Index in_cols_ = 0;
};

/// Per-channel batch normalization over batch and spatial positions.
/// Uses batch statistics in training, running averages at inference.
class BatchNormLayer : public Layer {
public:
    BatchNormLayer(int channels, int spatial, double momentum = 0.99,
                   double eps = 1e-5);
    Batch forward(const Batch& x, bool training) override;
    Batch backward(const Batch& dy) override;
    std::string kind() const override { return "batchnorm"; }

    Eigen::VectorXd running_mean;
    Eigen::VectorXd running_var;

private:
    int channels_, spatial_;
    double momentum_, eps_;
    Batch cached_norm_;
    Eigen::VectorXd batch_mean_, batch_inv_std_;
};

class ReluLayer : public Layer {
public:
    Batch forward(const Batch& x, bool training) override;
    Batch backward(const Batch& dy) override;
    std::string kind() const override { return "relu"; }

private:
    Batch mask_;
};

// ---- losses ------------------------------------------------------------------

/// Row-wise softmax, numerically stabilized.
Batch softmax(const Batch& logits);

/// Mean over the batch of -log p[target]; grad is (p - onehot) / batch.
double cross_entropy_loss(const Batch& logits, const std::vector<int>& targets,
                          Batch* grad_logits = nullptr);

/// Mean over batch and coordinates of squared error; grad = (pred - t)/batch.
double mse_loss(const Batch& pred, const Batch& targets, Batch* grad = nullptr);

// ---- model ---------------------------------------------------------------------

enum class Task { Classification, Regression };

struct ConvBlockConfig {
    int channels = 8;
    int kernel = 3;
    int pool = 2;
    bool batch_norm = true;
};

struct ModelConfig {
    Task task = Task::Classification;
    int input_frames = 64;
    int input_bins = 64;
    std::vector<ConvBlockConfig> conv_blocks = {{8, 3, 2, true}, {16, 3, 2, true}};
    std::vector<int> dense_hidden = {128, 64};
    int classes = 10;  // classification head width
    double learning_rate = 1e-2;
    double momentum = 0.9;
    int batch_size = 32;
    int epochs = 100;
    std::uint64_t seed = 0;
    double bn_momentum = 0.99;
    double bn_eps = 1e-5;
};

/// The layer stack for a config, with deterministic seeded initialization.
class Network {
public:
    Network(const ModelConfig& config, std::uint64_t seed);

    Batch forward(const Batch& x, bool training = false);
    /// Backpropagate dy through the whole stack (grads accumulate per layer).
    void backward(const Batch& dy);

    std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }
    const std::vector<std::unique_ptr<Layer>>& layers() const { return layers_; }
    int output_size() const { return output_size_; }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
    int output_size_ = 0;
};

struct Model {
    ModelConfig config;
    std::vector<std::string> labels;  // class index -> region name
    double feature_mean = 0.0;
    double feature_std = 1.0;
    Eigen::Vector2d target_mean = Eigen::Vector2d::Zero();  // regression only
    Eigen::Vector2d target_std = Eigen::Vector2d::Ones();
    std::shared_ptr<Network> network;
};

struct TrainReport {
    std::vector<double> epoch_loss;
    double validation_macro_f1 = 0.0;   // classification
    double validation_mse = 0.0;        // regression
    std::vector<int> validation_truth;  // class ids (classification)
    std::vector<int> validation_pred;
    std::vector<Eigen::Vector2d> validation_xy_truth;  // regression
    std::vector<Eigen::Vector2d> validation_xy_pred;
};

/// Block-average a spectrogram to the fixed [frames x bins] input shape.
Eigen::MatrixXd downsample_spectrogram(const Eigen::MatrixXd& values,
                                       int target_frames, int target_bins);

/// Classification probabilities or raw coordinates for one spectrogram.
Eigen::VectorXd forward(const Model& model, const Spectrogram& spec);
std::string predict_region(const Model& model, const Spectrogram& spec);
Eigen::Vector2d predict_xy(const Model& model, const Spectrogram& spec);

/// Trains on every train entry not in `fold_id`, validates on `fold_id`.
/// Deterministic for a fixed config seed.
std::pair<Model, TrainReport> train(const ModelConfig& config,
                                    const DatasetManifest& manifest,
                                    const std::string& data_dir, int fold_id);

// Versioned binary model file: magic "ELMDL1", length-prefixed config text,
// then raw little-endian float32 parameters in layer order.
void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

/// Checksum of the serialized parameter block (determinism checks).
std::string model_checksum(const Model& model);

}  // namespace echoloc
