#include "sinkem/mixture.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sinkem/rng.hpp"

namespace sinkem {

using json = nlohmann::json;

std::string format_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const EMat> cov_map(const MixtureModel& m, int k) {
    return {m.covariances.data() + static_cast<std::size_t>(k) * m.d * m.d, m.d, m.d};
}

}  // namespace

void MixtureModel::validate() const {
    if (K < 1) throw InvalidInput("K: component count must be >= 1");
    if (d < 1) throw InvalidInput("d: dimension must be >= 1");
    if (static_cast<int>(weights.size()) != K) throw InvalidInput("weights: expected " + std::to_string(K) + " entries");
    if (static_cast<int>(means.size()) != K * d) throw InvalidInput("means: expected K*d values");
    if (static_cast<int>(covariances.size()) != K * d * d) throw InvalidInput("covariances: expected K*d*d values");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw InvalidInput("weights: entries must be nonnegative");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw InvalidInput("weights: must sum to 1 (got " + format_double(sum) + ")");
    for (int k = 0; k < K; ++k) {
        auto C = cov_map(*this, k);
        if ((C - C.transpose()).cwiseAbs().maxCoeff() > 1e-12)
            throw InvalidInput("covariances: component " + std::to_string(k) + " is not symmetric");
        Eigen::SelfAdjointEigenSolver<EMat> es(C, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < covariance_floor * (1.0 - 1e-9))
            throw InvalidInput("covariances: component " + std::to_string(k) +
                               " has an eigenvalue below the floor " + format_double(covariance_floor));
    }
    for (double m : means)
        if (!std::isfinite(m)) throw InvalidInput("means: entries must be finite");
}

int MixtureModel::floor_covariances() {
    int adjusted = 0;
    for (int k = 0; k < K; ++k) {
        Eigen::Map<EMat> C(covariances.data() + static_cast<std::size_t>(k) * d * d, d, d);
        EMat sym = 0.5 * (C + C.transpose());
        Eigen::SelfAdjointEigenSolver<EMat> es(sym);
        if (es.eigenvalues().minCoeff() >= covariance_floor) {
            C = sym;
            continue;
        }
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(covariance_floor);
        C = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        ++adjusted;
    }
    return adjusted;
}

MixtureModel MixtureModel::isotropic(std::vector<double> weights, std::vector<std::vector<double>> means,
                                     double variance) {
    MixtureModel m;
    m.K = static_cast<int>(weights.size());
    m.d = means.empty() ? 0 : static_cast<int>(means[0].size());
    m.weights = std::move(weights);
    m.means.reserve(static_cast<std::size_t>(m.K) * m.d);
    for (const auto& mu : means) m.means.insert(m.means.end(), mu.begin(), mu.end());
    m.covariances.assign(static_cast<std::size_t>(m.K) * m.d * m.d, 0.0);
    for (int k = 0; k < m.K; ++k)
        for (int j = 0; j < m.d; ++j) m.covariances[static_cast<std::size_t>(k) * m.d * m.d + j * m.d + j] = variance;
    return m;
}

std::string MixtureModel::to_json() const {
    json j;
    j["K"] = K;
    j["d"] = d;
    j["weights"] = weights;
    json jm = json::array(), jc = json::array();
    for (int k = 0; k < K; ++k) {
        jm.push_back(std::vector<double>(mean(k).begin(), mean(k).end()));
        jc.push_back(std::vector<double>(covariance(k).begin(), covariance(k).end()));
    }
    j["means"] = jm;
    j["covariances"] = jc;
    return j.dump(2);
}

MixtureModel MixtureModel::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InvalidInput(std::string("model json: ") + e.what());
    }
    MixtureModel m;
    try {
        m.K = j.at("K").get<int>();
        m.d = j.at("d").get<int>();
        m.weights = j.at("weights").get<std::vector<double>>();
        for (const auto& row : j.at("means")) {
            auto v = row.get<std::vector<double>>();
            if (static_cast<int>(v.size()) != m.d) throw InvalidInput("means: row length != d");
            m.means.insert(m.means.end(), v.begin(), v.end());
        }
        for (const auto& row : j.at("covariances")) {
            auto v = row.get<std::vector<double>>();
            if (static_cast<int>(v.size()) != m.d * m.d) throw InvalidInput("covariances: row length != d*d");
            m.covariances.insert(m.covariances.end(), v.begin(), v.end());
        }
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("model json: ") + e.what());
    }
    m.validate();
    return m;
}

MixtureModel MixtureModel::load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("model file: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

void MixtureModel::save_json_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InvalidInput("model file: cannot write " + path);
    out << to_json() << "\n";
}

void Dataset::validate() const {
    if (d < 1) throw InvalidInput("dataset: dimension must be >= 1");
    if (points.empty() || static_cast<int>(points.size()) % d != 0)
        throw InvalidInput("dataset: needs at least one point and a multiple of d values");
    for (double v : points)
        if (!std::isfinite(v)) throw InvalidInput("dataset: all points must be finite");
}

std::string Dataset::to_csv() const {
    std::string out = "# seed=" + std::to_string(seed) + "\n";
    const int N = n();
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < d; ++j) {
            if (j) out += ',';
            out += format_double(points[static_cast<std::size_t>(i) * d + j]);
        }
        out += '\n';
    }
    return out;
}

Dataset Dataset::from_csv(const std::string& text) {
    Dataset ds;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            auto pos = line.find("seed=");
            if (pos != std::string::npos) ds.seed = std::strtoull(line.c_str() + pos + 5, nullptr, 10);
            continue;
        }
        std::istringstream ls(line);
        std::string cell;
        int cols = 0;
        while (std::getline(ls, cell, ',')) {
            double v = 0.0;
            auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc()) throw InvalidInput("dataset csv: bad number '" + cell + "'");
            ds.points.push_back(v);
            ++cols;
        }
        if (ds.d == 0)
            ds.d = cols;
        else if (cols != ds.d)
            throw InvalidInput("dataset csv: inconsistent row length");
    }
    ds.validate();
    return ds;
}

Dataset Dataset::load_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("data file: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_csv(ss.str());
}

void Dataset::save_csv_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InvalidInput("data file: cannot write " + path);
    out << to_csv();
}

kernels::ComponentModel factorize(const MixtureModel& model) {
    kernels::ComponentModel cm;
    cm.K = model.K;
    cm.d = model.d;
    cm.means = model.means;
    cm.chol.resize(model.covariances.size());
    cm.log_norm.resize(model.K);
    const double half_log_2pi = 0.91893853320467274178;
    for (int k = 0; k < model.K; ++k) {
        Eigen::LLT<EMat> llt(cov_map(model, k));
        if (llt.info() != Eigen::Success)
            throw NumericalError("covariance of component " + std::to_string(k) + " is not positive definite");
        EMat L = llt.matrixL();
        double log_det_half = 0.0;
        for (int j = 0; j < model.d; ++j) log_det_half += std::log(L(j, j));
        for (int a = 0; a < model.d; ++a)
            for (int b = 0; b < model.d; ++b)
                cm.chol[static_cast<std::size_t>(k) * model.d * model.d + a * model.d + b] = (b <= a) ? L(a, b) : 0.0;
        cm.log_norm[k] = (model.weights[k] > 0.0 ? std::log(model.weights[k])
                                                 : -std::numeric_limits<double>::infinity()) -
                         model.d * half_log_2pi - log_det_half;
    }
    return cm;
}

double log_density(const MixtureModel& model, std::span<const double> y) {
    if (static_cast<int>(y.size()) != model.d)
        throw InvalidInput("point: dimension " + std::to_string(y.size()) + " != model d " + std::to_string(model.d));
    auto cm = factorize(model);
    Matrix logk;
    kernels::serial::gaussian_log_kernel(cm, y.data(), 1, logk);
    return kernels::logsumexp(logk.data.data(), logk.data.size());
}

double negative_log_likelihood(const MixtureModel& model, const Dataset& data) {
    if (data.n() < 1) throw InvalidInput("dataset: empty");
    if (data.d != model.d) throw InvalidInput("dataset: dimension mismatch with model");
    auto cm = factorize(model);
    Matrix logk;
    kernels::gaussian_log_kernel(cm, data.points.data(), data.n(), logk);
    std::vector<double> per_point(data.n());
    kernels::per_point_log_density(logk, per_point.data());
    return -kernels::mean_fixed_order(per_point.data(), per_point.size());
}

Dataset sample_labeled(const MixtureModel& model, int n, std::uint64_t seed, std::vector<int>& labels) {
    if (n < 1) throw InvalidInput("sample: n must be >= 1");
    model.validate();
    auto cm = factorize(model);
    Dataset ds;
    ds.d = model.d;
    ds.seed = seed;
    ds.points.resize(static_cast<std::size_t>(n) * model.d);
    labels.resize(n);
    Rng rng(seed);
    std::vector<double> z(model.d);
    for (int i = 0; i < n; ++i) {
        int k = rng.categorical(model.weights);
        labels[i] = k;
        for (int j = 0; j < model.d; ++j) z[j] = rng.normal();
        const double* L = cm.chol.data() + static_cast<std::size_t>(k) * model.d * model.d;
        const double* mu = model.means.data() + static_cast<std::size_t>(k) * model.d;
        for (int r = 0; r < model.d; ++r) {
            double v = mu[r];
            for (int c = 0; c <= r; ++c) v += L[r * model.d + c] * z[c];
            ds.points[static_cast<std::size_t>(i) * model.d + r] = v;
        }
    }
    return ds;
}

Dataset sample(const MixtureModel& model, int n, std::uint64_t seed) {
    std::vector<int> labels;
    return sample_labeled(model, n, seed, labels);
}

Responsibilities vanilla_posterior(const MixtureModel& model, const Dataset& data) {
    if (data.d != model.d) throw InvalidInput("dataset: dimension mismatch with model");
    auto cm = factorize(model);
    Matrix logk;
    kernels::gaussian_log_kernel(cm, data.points.data(), data.n(), logk);
    Responsibilities r;
    int bad = kernels::posterior_from_log_kernel(logk, r.m);
    if (bad >= 0)
        throw NumericalError("all component densities underflow at point " + std::to_string(bad));
    return r;
}

}  // namespace sinkem
