#include "poisoncap/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "poisoncap/rng.hpp"

namespace poisoncap {

// ---------------------------------------------------------------------------
// Dataset

void Dataset::push_row(const std::vector<double>& values, int label) {
    if (dim == 0) dim = values.size();
    if (values.size() != dim) {
        throw TrainingError("feature row width mismatch: expected " +
                            std::to_string(dim) + ", got " +
                            std::to_string(values.size()));
    }
    x.insert(x.end(), values.begin(), values.end());
    y.push_back(label);
}

Dataset make_dataset(const std::vector<FeatureVector>& rows, bool binarize) {
    Dataset d;
    if (binarize) {
        d.classes = {"benign", "attack"};
        for (const FeatureVector& fv : rows) {
            d.push_row(fv.values, fv.label == "benign" ? 0 : 1);
        }
        return d;
    }
    std::set<std::string> labels;
    for (const FeatureVector& fv : rows) labels.insert(fv.label);
    if (labels.count("benign")) {
        d.classes.push_back("benign");
        labels.erase("benign");
    }
    for (const std::string& l : labels) d.classes.push_back(l);
    for (const FeatureVector& fv : rows) {
        const auto it = std::find(d.classes.begin(), d.classes.end(), fv.label);
        d.push_row(fv.values, static_cast<int>(it - d.classes.begin()));
    }
    return d;
}

// ---------------------------------------------------------------------------
// Forward pass helpers

namespace {

// Z = A * W^T + b, A is m x in, W is out x in (row-major), Z is m x out.
void affine(const std::vector<double>& a, std::size_t m, std::size_t in,
            const std::vector<double>& w, const std::vector<double>& b,
            std::size_t out, std::vector<double>& z) {
    z.assign(m * out, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a.data() + i * in;
        double* zrow = z.data() + i * out;
        for (std::size_t j = 0; j < out; ++j) zrow[j] = b[j];
        for (std::size_t k = 0; k < in; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* wcol = w.data() + k; // stride `in` over rows
            for (std::size_t j = 0; j < out; ++j) {
                zrow[j] += av * wcol[j * in];
            }
        }
    }
}

void relu_inplace(std::vector<double>& z) {
    for (double& v : z) v = v > 0.0 ? v : 0.0;
}

double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                    : std::exp(z) / (1.0 + std::exp(z));
}

// Numerically stable binary cross-entropy on the logit.
double bce_with_logit(double z, double target) {
    return std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::fabs(z)));
}

void softmax_row(const double* z, std::size_t k, double* out) {
    double zmax = z[0];
    for (std::size_t j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        out[j] = std::exp(z[j] - zmax);
        sum += out[j];
    }
    for (std::size_t j = 0; j < k; ++j) out[j] /= sum;
}

} // namespace

// ---------------------------------------------------------------------------
// IdsModel

std::vector<double> IdsModel::predict_proba(const double* row) const {
    const std::size_t d0 = input_dim();
    std::vector<double> a(d0);
    for (std::size_t j = 0; j < d0; ++j) {
        a[j] = (row[j] - feat_mean[j]) / feat_std[j];
    }
    std::vector<double> z;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        affine(a, 1, static_cast<std::size_t>(dims[l]), weights[l], biases[l],
               static_cast<std::size_t>(dims[l + 1]), z);
        if (l + 2 < dims.size()) relu_inplace(z);
        a = z;
    }
    if (loss == LossKind::BinaryCrossEntropy) {
        const double p = sigmoid(a[0]);
        return {1.0 - p, p};
    }
    std::vector<double> probs(a.size());
    softmax_row(a.data(), a.size(), probs.data());
    return probs;
}

std::vector<double> IdsModel::predict_proba(const std::vector<double>& row) const {
    if (row.size() != input_dim()) {
        throw TrainingError("predict: row width " + std::to_string(row.size()) +
                            " != model input " + std::to_string(input_dim()));
    }
    return predict_proba(row.data());
}

int IdsModel::predict_class(const double* row) const {
    const std::vector<double> p = predict_proba(row);
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

std::vector<double> IdsModel::hidden_activations(const Dataset& data) const {
    if (data.dim != input_dim()) {
        throw TrainingError("hidden_activations: dataset width mismatch");
    }
    const std::size_t m = data.size();
    const std::size_t d0 = input_dim();
    std::vector<double> a(m * d0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = data.row(i);
        for (std::size_t j = 0; j < d0; ++j) {
            a[i * d0 + j] = (row[j] - feat_mean[j]) / feat_std[j];
        }
    }
    std::vector<double> z;
    const std::size_t hidden_layers = dims.size() - 2;
    for (std::size_t l = 0; l < hidden_layers; ++l) {
        affine(a, m, static_cast<std::size_t>(dims[l]), weights[l], biases[l],
               static_cast<std::size_t>(dims[l + 1]), z);
        relu_inplace(z);
        a.swap(z);
    }
    return a;
}

// ---------------------------------------------------------------------------
// Loss and gradients (the training path)

std::pair<double, std::vector<double>> loss_and_gradients(
    const IdsModel& model, const Dataset& data,
    const std::vector<std::size_t>& batch_rows) {
    const std::size_t m = batch_rows.size();
    const std::size_t layers = model.dims.size() - 1;
    const std::size_t d0 = model.input_dim();

    // Standardized input batch.
    std::vector<std::vector<double>> acts(layers + 1);
    acts[0].resize(m * d0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = data.row(batch_rows[i]);
        for (std::size_t j = 0; j < d0; ++j) {
            acts[0][i * d0 + j] = (row[j] - model.feat_mean[j]) / model.feat_std[j];
        }
    }

    for (std::size_t l = 0; l < layers; ++l) {
        affine(acts[l], m, static_cast<std::size_t>(model.dims[l]),
               model.weights[l], model.biases[l],
               static_cast<std::size_t>(model.dims[l + 1]), acts[l + 1]);
        if (l + 1 < layers) relu_inplace(acts[l + 1]);
    }

    const std::size_t out = static_cast<std::size_t>(model.dims.back());
    std::vector<double> delta(m * out);
    double loss = 0.0;

    if (model.loss == LossKind::BinaryCrossEntropy) {
        for (std::size_t i = 0; i < m; ++i) {
            const double z = acts[layers][i];
            const double target = data.y[batch_rows[i]] > 0 ? 1.0 : 0.0;
            loss += bce_with_logit(z, target);
            delta[i] = (sigmoid(z) - target) / static_cast<double>(m);
        }
    } else {
        std::vector<double> probs(out);
        for (std::size_t i = 0; i < m; ++i) {
            const double* zrow = acts[layers].data() + i * out;
            softmax_row(zrow, out, probs.data());
            const auto target = static_cast<std::size_t>(data.y[batch_rows[i]]);
            loss += -std::log(std::max(probs[target], 1e-300));
            for (std::size_t j = 0; j < out; ++j) {
                delta[i * out + j] =
                    (probs[j] - (j == target ? 1.0 : 0.0)) / static_cast<double>(m);
            }
        }
    }
    loss /= static_cast<double>(m);

    // Backward pass; gradients flattened [W0, b0, W1, b1, ...].
    std::size_t total = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        total += model.weights[l].size() + model.biases[l].size();
    }
    std::vector<double> grads(total, 0.0);

    std::vector<std::size_t> offsets(layers);
    {
        std::size_t off = 0;
        for (std::size_t l = 0; l < layers; ++l) {
            offsets[l] = off;
            off += model.weights[l].size() + model.biases[l].size();
        }
    }

    std::vector<double> next_delta;
    for (std::size_t l = layers; l-- > 0;) {
        const std::size_t in = static_cast<std::size_t>(model.dims[l]);
        const std::size_t on = static_cast<std::size_t>(model.dims[l + 1]);
        double* gw = grads.data() + offsets[l];
        double* gb = gw + in * on;

        // dW = delta^T * A, db = column sums of delta.
        for (std::size_t i = 0; i < m; ++i) {
            const double* drow = delta.data() + i * on;
            const double* arow = acts[l].data() + i * in;
            for (std::size_t j = 0; j < on; ++j) {
                const double dv = drow[j];
                if (dv == 0.0) continue;
                double* gwrow = gw + j * in;
                for (std::size_t k = 0; k < in; ++k) gwrow[k] += dv * arow[k];
                gb[j] += dv;
            }
        }

        if (l > 0) {
            // delta_{l-1} = (delta_l * W_l) o relu'(z_{l-1});
            // acts[l] is post-ReLU, so relu' is (act > 0).
            next_delta.assign(m * in, 0.0);
            for (std::size_t i = 0; i < m; ++i) {
                const double* drow = delta.data() + i * on;
                double* ndrow = next_delta.data() + i * in;
                for (std::size_t j = 0; j < on; ++j) {
                    const double dv = drow[j];
                    if (dv == 0.0) continue;
                    const double* wrow = model.weights[l].data() + j * in;
                    for (std::size_t k = 0; k < in; ++k) {
                        ndrow[k] += dv * wrow[k];
                    }
                }
                const double* arow = acts[l].data() + i * in;
                for (std::size_t k = 0; k < in; ++k) {
                    if (arow[k] <= 0.0) ndrow[k] = 0.0;
                }
            }
            delta.swap(next_delta);
        }
    }

    return {loss, std::move(grads)};
}

// ---------------------------------------------------------------------------
// Training

IdsModel train(const Dataset& data, const TrainConfig& cfg) {
    if (data.size() == 0) throw TrainingError("train: empty dataset");
    if (data.dim == 0) throw TrainingError("train: zero-width features");
    if (cfg.batch <= 0 || cfg.epochs < 0) {
        throw std::invalid_argument("train: batch and epochs must be positive");
    }

    const std::size_t classes = data.classes.size();
    if (classes < 2) {
        std::cerr << "train: dataset has a single class; model will be degenerate\n";
    }
    if (cfg.loss == LossKind::BinaryCrossEntropy && classes > 2) {
        throw TrainingError("train: binary loss with " + std::to_string(classes) +
                            " classes");
    }

    IdsModel model;
    model.loss = cfg.loss;
    model.classes = data.classes;
    if (model.classes.size() < 2) model.classes.push_back("__other");

    model.dims.push_back(static_cast<int>(data.dim));
    for (int h : cfg.hidden) {
        if (h <= 0) throw std::invalid_argument("train: hidden width must be > 0");
        model.dims.push_back(h);
    }
    const int out_units = cfg.loss == LossKind::BinaryCrossEntropy
                              ? 1
                              : static_cast<int>(model.classes.size());
    model.dims.push_back(out_units);

    // Standardization from the training rows. Constant features divide by 1.
    const std::size_t n = data.size();
    model.feat_mean.assign(data.dim, 0.0);
    model.feat_std.assign(data.dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = data.row(i);
        for (std::size_t j = 0; j < data.dim; ++j) model.feat_mean[j] += row[j];
    }
    for (double& v : model.feat_mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = data.row(i);
        for (std::size_t j = 0; j < data.dim; ++j) {
            const double d = row[j] - model.feat_mean[j];
            model.feat_std[j] += d * d;
        }
    }
    for (double& v : model.feat_std) {
        v = std::sqrt(v / static_cast<double>(n));
        if (!(v > 0.0)) v = 1.0;
    }

    // Fan-in uniform init.
    Rng rng(cfg.seed);
    for (std::size_t l = 0; l + 1 < model.dims.size(); ++l) {
        const auto in = static_cast<std::size_t>(model.dims[l]);
        const auto on = static_cast<std::size_t>(model.dims[l + 1]);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::vector<double> w(in * on);
        for (double& v : w) v = rng.uniform(-bound, bound);
        model.weights.push_back(std::move(w));
        model.biases.emplace_back(on, 0.0);
    }

    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < model.dims.size(); ++l) {
        total += model.weights[l].size() + model.biases[l].size();
    }
    std::vector<double> adam_m(total, 0.0), adam_v(total, 0.0);
    std::uint64_t step = 0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::size_t> batch_rows;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the deterministic stream.
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j = rng.below(i);
            std::swap(order[i - 1], order[j]);
        }

        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n;
             start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t stop =
                std::min(n, start + static_cast<std::size_t>(cfg.batch));
            batch_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(stop));

            auto [loss, grads] = loss_and_gradients(model, data, batch_rows);
            if (!std::isfinite(loss)) {
                throw TrainingError("train: non-finite loss at epoch " +
                                    std::to_string(epoch) + " batch " +
                                    std::to_string(batches));
            }
            epoch_loss += loss;
            ++batches;

            ++step;
            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            std::size_t p = 0;
            for (std::size_t l = 0; l + 1 < model.dims.size(); ++l) {
                auto apply = [&](std::vector<double>& params) {
                    for (double& value : params) {
                        const double g = grads[p];
                        adam_m[p] = cfg.beta1 * adam_m[p] + (1.0 - cfg.beta1) * g;
                        adam_v[p] = cfg.beta2 * adam_v[p] + (1.0 - cfg.beta2) * g * g;
                        const double mhat = adam_m[p] / bc1;
                        const double vhat = adam_v[p] / bc2;
                        value -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
                        ++p;
                    }
                };
                apply(model.weights[l]);
                apply(model.biases[l]);
            }
        }
        if (cfg.verbose) {
            std::cerr << "epoch " << epoch << " loss "
                      << (batches ? epoch_loss / static_cast<double>(batches) : 0.0)
                      << "\n";
        }
    }
    return model;
}

Evaluation evaluate(const IdsModel& model, const Dataset& data) {
    Evaluation ev;
    const std::size_t k = model.classes.size();
    ev.confusion.classes = k;
    ev.confusion.counts.assign(k * k, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const int pred = model.predict_class(data.row(i));
        const int actual = data.y[i];
        ev.confusion.counts[static_cast<std::size_t>(actual) * k +
                            static_cast<std::size_t>(pred)] += 1;
        if (pred == actual) ++correct;
    }
    ev.accuracy = data.size() ? static_cast<double>(correct) /
                                    static_cast<double>(data.size())
                              : 0.0;
    return ev;
}

std::string ConfusionMatrix::to_text(const std::vector<std::string>& names) const {
    std::ostringstream os;
    os << "actual\\predicted";
    for (std::size_t j = 0; j < classes; ++j) os << "\t" << names[j];
    os << "\n";
    for (std::size_t i = 0; i < classes; ++i) {
        os << names[i];
        for (std::size_t j = 0; j < classes; ++j) os << "\t" << at(i, j);
        os << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr std::uint32_t kModelMagic = 0x4d494350; // "PCIM" little-endian
constexpr std::uint32_t kModelVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

struct ByteReader {
    const std::string& data;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > data.size()) throw TrainingError("model file truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(
                     static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)]))
                 << (8 * i);
        }
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(
                     static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)]))
                 << (8 * i);
        }
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t len = u32();
        need(len);
        std::string s = data.substr(pos, len);
        pos += len;
        return s;
    }
};

void put_vec(std::string& out, const std::vector<double>& v) {
    put_u32(out, static_cast<std::uint32_t>(v.size()));
    for (double d : v) put_f64(out, d);
}

std::vector<double> read_vec(ByteReader& r) {
    const std::uint32_t n = r.u32();
    std::vector<double> v(n);
    for (std::uint32_t i = 0; i < n; ++i) v[i] = r.f64();
    return v;
}

} // namespace

void IdsModel::save(const std::string& path) const {
    std::string out;
    put_u32(out, kModelMagic);
    put_u32(out, kModelVersion);
    put_u32(out, loss == LossKind::BinaryCrossEntropy ? 0u : 1u);
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    for (int d : dims) put_u32(out, static_cast<std::uint32_t>(d));
    put_u32(out, static_cast<std::uint32_t>(classes.size()));
    for (const std::string& c : classes) put_str(out, c);
    put_vec(out, feat_mean);
    put_vec(out, feat_std);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        put_vec(out, weights[l]);
        put_vec(out, biases[l]);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw TrainingError("cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw TrainingError("short write to " + path);
}

IdsModel IdsModel::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw TrainingError("cannot open " + path);
    std::string data{std::istreambuf_iterator<char>(f),
                     std::istreambuf_iterator<char>()};
    ByteReader r{data};
    if (r.u32() != kModelMagic) throw TrainingError(path + ": not a model file");
    const std::uint32_t version = r.u32();
    if (version != kModelVersion) {
        throw TrainingError(path + ": unsupported model version " +
                            std::to_string(version));
    }
    IdsModel m;
    m.loss = r.u32() == 0 ? LossKind::BinaryCrossEntropy
                          : LossKind::CategoricalCrossEntropy;
    const std::uint32_t ndims = r.u32();
    for (std::uint32_t i = 0; i < ndims; ++i) {
        m.dims.push_back(static_cast<int>(r.u32()));
    }
    const std::uint32_t nclasses = r.u32();
    for (std::uint32_t i = 0; i < nclasses; ++i) m.classes.push_back(r.str());
    m.feat_mean = read_vec(r);
    m.feat_std = read_vec(r);
    for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
        m.weights.push_back(read_vec(r));
        m.biases.push_back(read_vec(r));
    }
    return m;
}

} // namespace poisoncap
