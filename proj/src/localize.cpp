// SPDX-License-Identifier: Apache-2.0
#include "echoloc/localize.hpp"

#include "echoloc/eval.hpp"
#include "echoloc/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace echoloc {

using nlohmann::json;

namespace {

double gaussian(RandomStream& rng) {
    const double u1 = std::max(rng.next_double(), 1e-300);
    const double u2 = rng.next_double();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
}

void he_init(Eigen::VectorXd& weights, int fan_in, RandomStream& rng) {
    const double std_dev = std::sqrt(2.0 / std::max(1, fan_in));
    for (Eigen::Index i = 0; i < weights.size(); ++i)
        weights[i] = std_dev * gaussian(rng);
}

}  // namespace

// ---- dense -------------------------------------------------------------------

DenseLayer::DenseLayer(int in_features, int out_features)
    : in_(in_features), out_(out_features) {
    params = Eigen::VectorXd::Zero(in_ * out_ + out_);
    grads = Eigen::VectorXd::Zero(params.size());
}

Batch DenseLayer::forward(const Batch& x, bool training) {
    if (x.cols() != in_) throw UserError("dense layer input shape mismatch");
    if (training) cached_input_ = x;
    Eigen::Map<const Eigen::MatrixXd> w(params.data(), in_, out_);
    Eigen::Map<const Eigen::VectorXd> b(params.data() + in_ * out_, out_);
    return (x * w).rowwise() + b.transpose();
}

Batch DenseLayer::backward(const Batch& dy) {
    Eigen::Map<const Eigen::MatrixXd> w(params.data(), in_, out_);
    Eigen::Map<Eigen::MatrixXd> dw(grads.data(), in_, out_);
    Eigen::Map<Eigen::VectorXd> db(grads.data() + in_ * out_, out_);
    dw = cached_input_.transpose() * dy;
    db = dy.colwise().sum();
    return dy * w.transpose();
}

// ---- convolution ----------------------------------------------------------------

Conv2dLayer::Conv2dLayer(int in_channels, int out_channels, int kernel,
                         int height, int width)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      height_(height),
      width_(width),
      pad_(kernel / 2) {
    if (kernel % 2 == 0) throw UserError("conv kernel size must be odd");
    const int k2 = in_channels_ * kernel_ * kernel_;
    params = Eigen::VectorXd::Zero(out_channels_ * k2 + out_channels_);
    grads = Eigen::VectorXd::Zero(params.size());
}

Eigen::MatrixXd Conv2dLayer::im2col(const Eigen::VectorXd& sample) const {
    const int k2 = kernel_ * kernel_;
    Eigen::MatrixXd col =
        Eigen::MatrixXd::Zero(in_channels_ * k2, height_ * width_);
    for (int ic = 0; ic < in_channels_; ++ic) {
        const double* plane = sample.data() + ic * height_ * width_;
        for (int dr = 0; dr < kernel_; ++dr) {
            for (int dc = 0; dc < kernel_; ++dc) {
                const int row = ic * k2 + dr * kernel_ + dc;
                for (int r = 0; r < height_; ++r) {
                    const int sr = r + dr - pad_;
                    if (sr < 0 || sr >= height_) continue;
                    for (int c = 0; c < width_; ++c) {
                        const int sc = c + dc - pad_;
                        if (sc < 0 || sc >= width_) continue;
                        col(row, r * width_ + c) = plane[sr * width_ + sc];
                    }
                }
            }
        }
    }
    return col;
}

Batch Conv2dLayer::forward(const Batch& x, bool training) {
    const int in_size = in_channels_ * height_ * width_;
    if (x.cols() != in_size) throw UserError("conv layer input shape mismatch");
    if (training) cached_input_ = x;
    const int k2 = in_channels_ * kernel_ * kernel_;
    Eigen::Map<const Eigen::MatrixXd> w(params.data(), k2, out_channels_);
    Eigen::Map<const Eigen::VectorXd> bias(params.data() + k2 * out_channels_,
                                           out_channels_);
    Batch out(x.rows(), out_size());
    for (Eigen::Index s = 0; s < x.rows(); ++s) {
        const Eigen::MatrixXd col = im2col(x.row(s).transpose());
        // [out_ch x HW]
        Eigen::MatrixXd y = w.transpose() * col;
        y.colwise() += bias;
        for (int oc = 0; oc < out_channels_; ++oc)
            for (int p = 0; p < height_ * width_; ++p)
                out(s, oc * height_ * width_ + p) = y(oc, p);
    }
    return out;
}

Batch Conv2dLayer::backward(const Batch& dy) {
    const int k2 = in_channels_ * kernel_ * kernel_;
    const int hw = height_ * width_;
    Eigen::Map<const Eigen::MatrixXd> w(params.data(), k2, out_channels_);
    Eigen::Map<Eigen::MatrixXd> dw(grads.data(), k2, out_channels_);
    Eigen::Map<Eigen::VectorXd> dbias(grads.data() + k2 * out_channels_,
                                      out_channels_);
    dw.setZero();
    dbias.setZero();
    Batch dx = Batch::Zero(dy.rows(), in_channels_ * hw);
    Eigen::MatrixXd dy_mat(out_channels_, hw);
    for (Eigen::Index s = 0; s < dy.rows(); ++s) {
        for (int oc = 0; oc < out_channels_; ++oc)
            for (int p = 0; p < hw; ++p) dy_mat(oc, p) = dy(s, oc * hw + p);
        const Eigen::MatrixXd col = im2col(cached_input_.row(s).transpose());
        dw += col * dy_mat.transpose();
        dbias += dy_mat.rowwise().sum();
        const Eigen::MatrixXd dcol = w * dy_mat;  // [k2 x HW]
        // col2im scatter-add
        for (int ic = 0; ic < in_channels_; ++ic) {
            for (int dr = 0; dr < kernel_; ++dr) {
                for (int dc = 0; dc < kernel_; ++dc) {
                    const int row = ic * kernel_ * kernel_ + dr * kernel_ + dc;
                    for (int r = 0; r < height_; ++r) {
                        const int sr = r + dr - pad_;
                        if (sr < 0 || sr >= height_) continue;
                        for (int c = 0; c < width_; ++c) {
                            const int sc = c + dc - pad_;
                            if (sc < 0 || sc >= width_) continue;
                            dx(s, ic * hw + sr * width_ + sc) +=
                                dcol(row, r * width_ + c);
                        }
                    }
                }
            }
        }
    }
    return dx;
}

// ---- max pooling ------------------------------------------------------------------

MaxPool2Layer::MaxPool2Layer(int channels, int height, int width, int pool)
    : channels_(channels), height_(height), width_(width), pool_(pool) {
    if (height % pool != 0 || width % pool != 0)
        throw UserError("pool size must divide the spatial dimensions");
}

Batch MaxPool2Layer::forward(const Batch& x, bool training) {
    const int oh = height_ / pool_;
    const int ow = width_ / pool_;
    in_cols_ = x.cols();
    Batch out(x.rows(), out_size());
    argmax_.resize(x.rows(), out_size());
    for (Eigen::Index s = 0; s < x.rows(); ++s) {
        for (int c = 0; c < channels_; ++c) {
            const int base = c * height_ * width_;
            for (int r = 0; r < oh; ++r) {
                for (int col = 0; col < ow; ++col) {
                    double best = -std::numeric_limits<double>::infinity();
                    int best_idx = -1;
                    for (int pr = 0; pr < pool_; ++pr) {
                        for (int pc = 0; pc < pool_; ++pc) {
                            const int idx = base + (r * pool_ + pr) * width_ +
                                            col * pool_ + pc;
                            if (x(s, idx) > best) {
                                best = x(s, idx);
                                best_idx = idx;
                            }
                        }
                    }
                    const int out_idx = c * oh * ow + r * ow + col;
                    out(s, out_idx) = best;
                    argmax_(s, out_idx) = best_idx;
                }
            }
        }
    }
    (void)training;
    return out;
}

Batch MaxPool2Layer::backward(const Batch& dy) {
    Batch dx = Batch::Zero(dy.rows(), in_cols_);
    for (Eigen::Index s = 0; s < dy.rows(); ++s)
        for (Eigen::Index j = 0; j < dy.cols(); ++j)
            dx(s, argmax_(s, j)) += dy(s, j);
    return dx;
}

// ---- batch normalization -------------------------------------------------------------

BatchNormLayer::BatchNormLayer(int channels, int spatial, double momentum,
                               double eps)
    : channels_(channels), spatial_(spatial), momentum_(momentum), eps_(eps) {
    params = Eigen::VectorXd::Zero(2 * channels);
    params.head(channels).setOnes();  // gamma
    grads = Eigen::VectorXd::Zero(params.size());
    running_mean = Eigen::VectorXd::Zero(channels);
    running_var = Eigen::VectorXd::Ones(channels);
}

Batch BatchNormLayer::forward(const Batch& x, bool training) {
    if (x.cols() != channels_ * spatial_)
        throw UserError("batch-norm input shape mismatch");
    Batch out(x.rows(), x.cols());
    const auto gamma = params.head(channels_);
    const auto beta = params.tail(channels_);

    Eigen::VectorXd mean(channels_), var(channels_);
    if (training) {
        const double n = static_cast<double>(x.rows() * spatial_);
        for (int c = 0; c < channels_; ++c) {
            const auto block = x.middleCols(c * spatial_, spatial_);
            mean[c] = block.sum() / n;
            var[c] = (block.array() - mean[c]).square().sum() / n;
        }
        running_mean = momentum_ * running_mean + (1.0 - momentum_) * mean;
        running_var = momentum_ * running_var + (1.0 - momentum_) * var;
        batch_mean_ = mean;
        batch_inv_std_ = (var.array() + eps_).rsqrt();
        cached_norm_.resize(x.rows(), x.cols());
    } else {
        mean = running_mean;
        var = running_var;
    }
    const Eigen::VectorXd inv_std = (var.array() + eps_).rsqrt();
    for (int c = 0; c < channels_; ++c) {
        const auto block = x.middleCols(c * spatial_, spatial_);
        const Eigen::MatrixXd norm = (block.array() - mean[c]) * inv_std[c];
        if (training) cached_norm_.middleCols(c * spatial_, spatial_) = norm;
        out.middleCols(c * spatial_, spatial_) =
            (norm.array() * gamma[c] + beta[c]).matrix();
    }
    return out;
}

Batch BatchNormLayer::backward(const Batch& dy) {
    const auto gamma = params.head(channels_);
    auto dgamma = grads.head(channels_);
    auto dbeta = grads.tail(channels_);
    Batch dx(dy.rows(), dy.cols());
    const double n = static_cast<double>(dy.rows() * spatial_);
    for (int c = 0; c < channels_; ++c) {
        const auto dy_block = dy.middleCols(c * spatial_, spatial_);
        const auto norm = cached_norm_.middleCols(c * spatial_, spatial_);
        const double sum_dy = dy_block.sum();
        const double sum_dy_norm = (dy_block.array() * norm.array()).sum();
        dgamma[c] = sum_dy_norm;
        dbeta[c] = sum_dy;
        dx.middleCols(c * spatial_, spatial_) =
            (gamma[c] * batch_inv_std_[c] / n) *
            (n * dy_block.array() - sum_dy - norm.array() * sum_dy_norm)
                .matrix();
    }
    return dx;
}

// ---- relu --------------------------------------------------------------------------

Batch ReluLayer::forward(const Batch& x, bool training) {
    if (training) mask_ = (x.array() > 0.0).cast<double>();
    return x.cwiseMax(0.0);
}

Batch ReluLayer::backward(const Batch& dy) {
    return dy.cwiseProduct(mask_);
}

// ---- losses ------------------------------------------------------------------------

Batch softmax(const Batch& logits) {
    Batch out(logits.rows(), logits.cols());
    for (Eigen::Index s = 0; s < logits.rows(); ++s) {
        const Eigen::ArrayXd shifted =
            logits.row(s).array() - logits.row(s).maxCoeff();
        const Eigen::ArrayXd e = shifted.exp();
        out.row(s) = (e / e.sum()).matrix();
    }
    return out;
}

double cross_entropy_loss(const Batch& logits, const std::vector<int>& targets,
                          Batch* grad_logits) {
    if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
        throw UserError("target count does not match batch size");
    const Batch probs = softmax(logits);
    double loss = 0.0;
    for (Eigen::Index s = 0; s < logits.rows(); ++s) {
        const int t = targets[static_cast<size_t>(s)];
        if (t < 0 || t >= logits.cols()) throw UserError("target class out of range");
        loss -= std::log(std::max(probs(s, t), 1e-300));
    }
    loss /= static_cast<double>(logits.rows());
    if (grad_logits) {
        *grad_logits = probs;
        for (Eigen::Index s = 0; s < logits.rows(); ++s)
            (*grad_logits)(s, targets[static_cast<size_t>(s)]) -= 1.0;
        *grad_logits /= static_cast<double>(logits.rows());
    }
    return loss;
}

double mse_loss(const Batch& pred, const Batch& targets, Batch* grad) {
    if (pred.rows() != targets.rows() || pred.cols() != targets.cols())
        throw UserError("prediction/target shape mismatch");
    const Batch diff = pred - targets;
    const double denom = static_cast<double>(pred.rows() * pred.cols());
    if (grad) *grad = 2.0 * diff / denom;
    return diff.array().square().sum() / denom;
}

// ---- network -----------------------------------------------------------------------

Network::Network(const ModelConfig& config, std::uint64_t seed) {
    int channels = 1;
    int height = config.input_frames;
    int width = config.input_bins;
    int layer_index = 0;
    for (const ConvBlockConfig& block : config.conv_blocks) {
        auto conv = std::make_unique<Conv2dLayer>(channels, block.channels,
                                                  block.kernel, height, width);
        {
            RandomStream rng(seed, static_cast<std::uint64_t>(layer_index++));
            const int fan_in = channels * block.kernel * block.kernel;
            auto weights = conv->params.head(conv->params.size() - block.channels);
            Eigen::VectorXd w = weights;
            he_init(w, fan_in, rng);
            conv->params.head(w.size()) = w;
        }
        layers_.push_back(std::move(conv));
        layers_.push_back(std::make_unique<MaxPool2Layer>(block.channels, height,
                                                          width, block.pool));
        ++layer_index;
        height /= block.pool;
        width /= block.pool;
        channels = block.channels;
        if (block.batch_norm) {
            layers_.push_back(std::make_unique<BatchNormLayer>(
                channels, height * width, config.bn_momentum, config.bn_eps));
            ++layer_index;
        }
        layers_.push_back(std::make_unique<ReluLayer>());
        ++layer_index;
    }

    int features = channels * height * width;
    for (int hidden : config.dense_hidden) {
        auto dense = std::make_unique<DenseLayer>(features, hidden);
        {
            RandomStream rng(seed, static_cast<std::uint64_t>(layer_index++));
            Eigen::VectorXd w = dense->params.head(features * hidden);
            he_init(w, features, rng);
            dense->params.head(w.size()) = w;
        }
        layers_.push_back(std::move(dense));
        layers_.push_back(std::make_unique<ReluLayer>());
        ++layer_index;
        features = hidden;
    }
    const int head = config.task == Task::Classification ? config.classes : 2;
    auto out = std::make_unique<DenseLayer>(features, head);
    {
        RandomStream rng(seed, static_cast<std::uint64_t>(layer_index++));
        Eigen::VectorXd w = out->params.head(features * head);
        he_init(w, features, rng);
        out->params.head(w.size()) = w;
    }
    layers_.push_back(std::move(out));
    output_size_ = head;
}

Batch Network::forward(const Batch& x, bool training) {
    Batch h = x;
    for (auto& layer : layers_) h = layer->forward(h, training);
    return h;
}

void Network::backward(const Batch& dy) {
    Batch g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
        g = (*it)->backward(g);
}

// ---- features -----------------------------------------------------------------------

Eigen::MatrixXd downsample_spectrogram(const Eigen::MatrixXd& values,
                                       int target_frames, int target_bins) {
    const Eigen::Index rows = values.rows();
    const Eigen::Index cols = values.cols();
    if (rows == 0 || cols == 0) throw UserError("empty spectrogram");
    Eigen::MatrixXd out(target_frames, target_bins);
    for (int r = 0; r < target_frames; ++r) {
        const auto r0 = static_cast<Eigen::Index>(r * rows / target_frames);
        auto r1 = static_cast<Eigen::Index>((r + 1) * rows / target_frames);
        if (r1 <= r0) r1 = std::min(r0 + 1, rows);
        for (int c = 0; c < target_bins; ++c) {
            const auto c0 = static_cast<Eigen::Index>(c * cols / target_bins);
            auto c1 = static_cast<Eigen::Index>((c + 1) * cols / target_bins);
            if (c1 <= c0) c1 = std::min(c0 + 1, cols);
            out(r, c) = values.block(r0, c0, r1 - r0, c1 - c0).mean();
        }
    }
    return out;
}

namespace {

Eigen::VectorXd feature_row(const Model& model, const Spectrogram& spec) {
    const Eigen::MatrixXd down = downsample_spectrogram(
        spec.values, model.config.input_frames, model.config.input_bins);
    Eigen::VectorXd flat(down.size());
    for (Eigen::Index r = 0; r < down.rows(); ++r)
        for (Eigen::Index c = 0; c < down.cols(); ++c)
            flat[r * down.cols() + c] = down(r, c);
    return (flat.array() - model.feature_mean) / model.feature_std;
}

}  // namespace

Eigen::VectorXd forward(const Model& model, const Spectrogram& spec) {
    const Eigen::VectorXd row = feature_row(model, spec);
    Batch x(1, row.size());
    x.row(0) = row;
    const Batch out = model.network->forward(x, false);
    if (model.config.task == Task::Classification)
        return softmax(out).row(0).transpose();
    Eigen::VectorXd coords = out.row(0).transpose();
    coords = (coords.array() * model.target_std.array() +
              model.target_mean.array())
                 .matrix();
    return coords;
}

std::string predict_region(const Model& model, const Spectrogram& spec) {
    if (model.config.task != Task::Classification)
        throw UserError("model is not a classifier");
    const Eigen::VectorXd probs = forward(model, spec);
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < probs.size(); ++i)
        if (probs[i] > probs[best]) best = i;  // ties keep the lowest index
    return model.labels[static_cast<size_t>(best)];
}

Eigen::Vector2d predict_xy(const Model& model, const Spectrogram& spec) {
    if (model.config.task != Task::Regression)
        throw UserError("model is not a regressor");
    const Eigen::VectorXd coords = forward(model, spec);
    return Eigen::Vector2d(coords[0], coords[1]);
}

// ---- training -----------------------------------------------------------------------

std::pair<Model, TrainReport> train(const ModelConfig& config,
                                    const DatasetManifest& manifest,
                                    const std::string& data_dir, int fold_id) {
    if (manifest.folds < 2) throw UserError("manifest has no fold assignment");
    if (fold_id < 0 || fold_id >= manifest.folds)
        throw UserError("fold id out of range");

    // Class labels from the train split, sorted for a stable mapping.
    std::set<std::string> label_set;
    for (const ManifestEntry& e : manifest.entries)
        if (e.placement.split == Split::Train) label_set.insert(e.placement.region);
    std::vector<std::string> labels(label_set.begin(), label_set.end());
    auto class_of = [&](const std::string& name) {
        return static_cast<int>(std::lower_bound(labels.begin(), labels.end(),
                                                 name) -
                                labels.begin());
    };

    ModelConfig cfg = config;
    if (cfg.task == Task::Classification)
        cfg.classes = static_cast<int>(labels.size());

    std::vector<Eigen::VectorXd> features;
    std::vector<int> class_targets;
    std::vector<Eigen::Vector2d> xy_targets;
    std::vector<bool> is_validation;
    for (const ManifestEntry& e : manifest.entries) {
        if (e.placement.split != Split::Train) continue;
        const std::string path =
            (std::filesystem::path(data_dir) / e.spectrogram_path).string();
        const Spectrogram spec = read_spectrogram(path);
        const Eigen::MatrixXd down = downsample_spectrogram(
            spec.values, cfg.input_frames, cfg.input_bins);
        Eigen::VectorXd flat(down.size());
        for (Eigen::Index r = 0; r < down.rows(); ++r)
            for (Eigen::Index c = 0; c < down.cols(); ++c)
                flat[r * down.cols() + c] = down(r, c);
        features.push_back(std::move(flat));
        class_targets.push_back(class_of(e.placement.region));
        xy_targets.emplace_back(e.placement.position.x(), e.placement.position.z());
        is_validation.push_back(e.fold == fold_id);
    }
    if (features.empty()) throw UserError("no train entries in manifest");

    // Standardization statistics from the training portion only.
    double sum = 0.0, sq_sum = 0.0;
    Eigen::Index count = 0;
    Eigen::Vector2d t_sum = Eigen::Vector2d::Zero();
    Eigen::Vector2d t_sq = Eigen::Vector2d::Zero();
    int t_count = 0;
    for (size_t i = 0; i < features.size(); ++i) {
        if (is_validation[i]) continue;
        sum += features[i].sum();
        sq_sum += features[i].squaredNorm();
        count += features[i].size();
        t_sum += xy_targets[i];
        t_sq += xy_targets[i].cwiseProduct(xy_targets[i]);
        ++t_count;
    }
    if (count == 0) throw UserError("fold leaves no training samples");
    const double mean = sum / static_cast<double>(count);
    const double variance =
        std::max(sq_sum / static_cast<double>(count) - mean * mean, 1e-12);

    Model model;
    model.config = cfg;
    model.labels = labels;
    model.feature_mean = mean;
    model.feature_std = std::sqrt(variance);
    model.target_mean = t_sum / std::max(1, t_count);
    const Eigen::Vector2d t_var =
        (t_sq / std::max(1, t_count) - model.target_mean.cwiseProduct(model.target_mean))
            .cwiseMax(1e-12);
    model.target_std = t_var.cwiseSqrt();
    model.network = std::make_shared<Network>(cfg, cfg.seed);

    std::vector<int> train_rows, val_rows;
    for (size_t i = 0; i < features.size(); ++i)
        (is_validation[i] ? val_rows : train_rows).push_back(static_cast<int>(i));

    auto standardized = [&](int i) {
        return ((features[static_cast<size_t>(i)].array() - model.feature_mean) /
                model.feature_std)
            .matrix();
    };

    // Momentum buffers aligned with each layer's parameter vector.
    std::vector<Eigen::VectorXd> velocity;
    for (auto& layer : model.network->layers())
        velocity.push_back(Eigen::VectorXd::Zero(layer->params.size()));

    TrainReport report;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order = train_rows;
        RandomStream shuffle_rng(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size();
             start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end =
                std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            const auto rows = static_cast<Eigen::Index>(end - start);
            Batch x(rows, features[0].size());
            std::vector<int> batch_classes;
            Batch batch_xy(rows, 2);
            for (Eigen::Index r = 0; r < rows; ++r) {
                const int idx = order[start + static_cast<size_t>(r)];
                x.row(r) = standardized(idx).transpose();
                batch_classes.push_back(class_targets[static_cast<size_t>(idx)]);
                batch_xy.row(r) =
                    ((xy_targets[static_cast<size_t>(idx)] - model.target_mean)
                         .cwiseQuotient(model.target_std))
                        .transpose();
            }
            const Batch out = model.network->forward(x, true);
            Batch grad;
            double loss;
            if (cfg.task == Task::Classification)
                loss = cross_entropy_loss(out, batch_classes, &grad);
            else
                loss = mse_loss(out, batch_xy, &grad);
            if (!std::isfinite(loss))
                throw std::runtime_error(
                    "training diverged (non-finite loss) at epoch " +
                    std::to_string(epoch));
            model.network->backward(grad);
            size_t li = 0;
            for (auto& layer : model.network->layers()) {
                if (layer->params.size() > 0) {
                    velocity[li] = cfg.momentum * velocity[li] -
                                   cfg.learning_rate * layer->grads;
                    layer->params += velocity[li];
                }
                ++li;
            }
            epoch_loss += loss;
            ++batches;
        }
        report.epoch_loss.push_back(batches ? epoch_loss / batches : 0.0);
    }

    // Held-out metrics.
    if (!val_rows.empty()) {
        Batch x(static_cast<Eigen::Index>(val_rows.size()), features[0].size());
        for (size_t r = 0; r < val_rows.size(); ++r)
            x.row(static_cast<Eigen::Index>(r)) =
                standardized(val_rows[r]).transpose();
        const Batch out = model.network->forward(x, false);
        if (cfg.task == Task::Classification) {
            for (size_t r = 0; r < val_rows.size(); ++r) {
                Eigen::Index best = 0;
                for (Eigen::Index c = 1; c < out.cols(); ++c)
                    if (out(static_cast<Eigen::Index>(r), c) >
                        out(static_cast<Eigen::Index>(r), best))
                        best = c;
                report.validation_pred.push_back(static_cast<int>(best));
                report.validation_truth.push_back(
                    class_targets[static_cast<size_t>(val_rows[r])]);
            }
            const ConfusionMatrix cm =
                confusion(report.validation_pred, report.validation_truth,
                          static_cast<int>(labels.size()));
            report.validation_macro_f1 = metrics(cm).macro_f1;
        } else {
            double total = 0.0;
            for (size_t r = 0; r < val_rows.size(); ++r) {
                Eigen::Vector2d pred =
                    out.row(static_cast<Eigen::Index>(r)).transpose();
                pred = pred.cwiseProduct(model.target_std) + model.target_mean;
                const Eigen::Vector2d truth = xy_targets[static_cast<size_t>(val_rows[r])];
                report.validation_xy_pred.push_back(pred);
                report.validation_xy_truth.push_back(truth);
                total += (pred - truth).squaredNorm() / 2.0;
            }
            report.validation_mse = total / static_cast<double>(val_rows.size());
        }
    }
    return {std::move(model), std::move(report)};
}

// ---- serialization ---------------------------------------------------------------------

namespace {

json config_to_json(const ModelConfig& c) {
    json blocks = json::array();
    for (const ConvBlockConfig& b : c.conv_blocks)
        blocks.push_back({{"channels", b.channels},
                          {"kernel", b.kernel},
                          {"pool", b.pool},
                          {"batch_norm", b.batch_norm}});
    return {{"task", c.task == Task::Classification ? "classification" : "regression"},
            {"input_frames", c.input_frames},
            {"input_bins", c.input_bins},
            {"conv_blocks", blocks},
            {"dense_hidden", c.dense_hidden},
            {"classes", c.classes},
            {"learning_rate", c.learning_rate},
            {"momentum", c.momentum},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"bn_momentum", c.bn_momentum},
            {"bn_eps", c.bn_eps}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.task = j.at("task").get<std::string>() == "classification"
                 ? Task::Classification
                 : Task::Regression;
    c.input_frames = j.at("input_frames").get<int>();
    c.input_bins = j.at("input_bins").get<int>();
    c.conv_blocks.clear();
    for (const auto& b : j.at("conv_blocks"))
        c.conv_blocks.push_back({b.at("channels").get<int>(),
                                 b.at("kernel").get<int>(),
                                 b.at("pool").get<int>(),
                                 b.at("batch_norm").get<bool>()});
    c.dense_hidden = j.at("dense_hidden").get<std::vector<int>>();
    c.classes = j.at("classes").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.momentum = j.at("momentum").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    c.bn_eps = j.at("bn_eps").get<double>();
    return c;
}

void append_f32(std::string& out, const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const auto f = static_cast<float>(v[i]);
        std::uint32_t raw;
        std::memcpy(&raw, &f, 4);
        for (int b = 0; b < 4; ++b)
            out.push_back(static_cast<char>((raw >> (8 * b)) & 0xff));
    }
}

Eigen::VectorXd read_f32(const std::string& data, size_t& pos, Eigen::Index n) {
    if (pos + 4 * static_cast<size_t>(n) > data.size())
        throw ParseError("truncated model parameter block");
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        std::uint32_t raw = 0;
        for (int b = 3; b >= 0; --b)
            raw = (raw << 8) | static_cast<unsigned char>(data[pos + 4 * static_cast<size_t>(i) + static_cast<size_t>(b)]);
        float f;
        std::memcpy(&f, &raw, 4);
        v[i] = f;
    }
    pos += 4 * static_cast<size_t>(n);
    return v;
}

std::string parameter_block(const Model& model) {
    std::string block;
    for (const auto& layer : model.network->layers()) {
        append_f32(block, layer->params);
        if (auto* bn = dynamic_cast<const BatchNormLayer*>(layer.get())) {
            append_f32(block, bn->running_mean);
            append_f32(block, bn->running_var);
        }
    }
    return block;
}

}  // namespace

void save_model(const Model& model, const std::string& path) {
    json meta = {{"config", config_to_json(model.config)},
                 {"labels", model.labels},
                 {"feature_mean", model.feature_mean},
                 {"feature_std", model.feature_std},
                 {"target_mean", {model.target_mean.x(), model.target_mean.y()}},
                 {"target_std", {model.target_std.x(), model.target_std.y()}}};
    const std::string meta_text = meta.dump();

    std::string out = "ELMDL1";
    const auto meta_len = static_cast<std::uint32_t>(meta_text.size());
    for (int b = 0; b < 4; ++b)
        out.push_back(static_cast<char>((meta_len >> (8 * b)) & 0xff));
    out += meta_text;
    out += parameter_block(model);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw UserError("cannot write model file: " + path);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open model file: " + path);
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    if (data.size() < 10 || data.substr(0, 6) != "ELMDL1")
        throw ParseError("bad model magic in " + path);
    std::uint32_t meta_len = 0;
    for (int b = 3; b >= 0; --b)
        meta_len = (meta_len << 8) | static_cast<unsigned char>(data[6 + static_cast<size_t>(b)]);
    if (10 + static_cast<size_t>(meta_len) > data.size())
        throw ParseError("truncated model metadata");
    json meta;
    try {
        meta = json::parse(data.substr(10, meta_len));
    } catch (const json::exception& e) {
        throw ParseError(std::string("model metadata parse failed: ") + e.what());
    }

    Model model;
    model.config = config_from_json(meta.at("config"));
    model.labels = meta.at("labels").get<std::vector<std::string>>();
    model.feature_mean = meta.at("feature_mean").get<double>();
    model.feature_std = meta.at("feature_std").get<double>();
    model.target_mean = Eigen::Vector2d(meta.at("target_mean")[0].get<double>(),
                                        meta.at("target_mean")[1].get<double>());
    model.target_std = Eigen::Vector2d(meta.at("target_std")[0].get<double>(),
                                       meta.at("target_std")[1].get<double>());
    model.network = std::make_shared<Network>(model.config, model.config.seed);

    size_t pos = 10 + static_cast<size_t>(meta_len);
    for (auto& layer : model.network->layers()) {
        layer->params = read_f32(data, pos, layer->params.size());
        if (auto* bn = dynamic_cast<BatchNormLayer*>(layer.get())) {
            bn->running_mean = read_f32(data, pos, bn->running_mean.size());
            bn->running_var = read_f32(data, pos, bn->running_var.size());
        }
    }
    if (pos != data.size())
        throw ParseError("model parameter block size mismatch");
    return model;
}

std::string model_checksum(const Model& model) {
    return fnv64_hex(parameter_block(model));
}

}  // namespace echoloc
