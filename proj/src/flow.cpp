#include "bevflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "bevflow/rng.hpp"

namespace bevflow {

TimeCode time_encode(double t, int d) {
  if (d <= 0 || d % 2 != 0) throw std::invalid_argument("time_encode: d must be positive and even");
  TimeCode code;
  code.values.resize(d);
  for (int e = 0; e * 2 < d; ++e) {
    const double freq = std::pow(10000.0, double(2 * e) / double(d));
    code.values[2 * e] = std::sin(t / freq);
    code.values[2 * e + 1] = std::cos(t / freq);
  }
  return code;
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// offsets of the column-major parameter blocks inside theta
struct Layout {
  int d, heads, hidden;
  std::size_t w1, b1, w2, b2;
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t wh, bh;
  std::size_t total;

  explicit Layout(const EstimatorHyperparams& h) : d(h.d), heads(h.n_heads), hidden(h.hidden) {
    if (d <= 0 || d % 2 != 0) throw std::invalid_argument("estimator: d must be even");
    if (heads <= 0 || d % heads != 0)
      throw std::invalid_argument("estimator: n_heads must divide d");
    std::size_t o = 0;
    w1 = o; o += std::size_t(hidden) * 4;
    b1 = o; o += hidden;
    w2 = o; o += std::size_t(d) * hidden;
    b2 = o; o += d;
    wq = o; o += std::size_t(d) * d;
    bq = o; o += d;
    wk = o; o += std::size_t(d) * d;
    bk = o; o += d;
    wv = o; o += std::size_t(d) * d;
    bv = o; o += d;
    wo = o; o += std::size_t(d) * d;
    bo = o; o += d;
    wh = o; o += std::size_t(3) * d;
    bh = o; o += 3;
    total = o;
  }
};

using CMap = Eigen::Map<const MatrixXd>;
using Map = Eigen::Map<MatrixXd>;

struct MhaCache {
  MatrixXd x;      // d x L tokens (feature + time code)
  VectorXd query;  // d
  VectorXd qhat;
  MatrixXd k, v;
  MatrixXd attn;   // heads x L
  VectorXd concat; // d
  VectorXd y;      // d
};

MhaCache mha_run(const Layout& L, const double* th, const VectorXd& query, const MatrixXd& x) {
  const int d = L.d, heads = L.heads, hd = d / heads;
  const auto n = x.cols();
  MhaCache c;
  c.x = x;
  c.query = query;
  CMap Wq(th + L.wq, d, d), Wk(th + L.wk, d, d), Wv(th + L.wv, d, d), Wo(th + L.wo, d, d);
  Eigen::Map<const VectorXd> bq(th + L.bq, d), bk(th + L.bk, d), bv(th + L.bv, d),
      bo(th + L.bo, d);
  c.qhat = Wq * query + bq;
  c.k = (Wk * x).colwise() + bk;
  c.v = (Wv * x).colwise() + bv;
  c.attn.resize(heads, n);
  const double scale = 1.0 / std::sqrt(double(hd));
  for (int h = 0; h < heads; ++h) {
    Eigen::RowVectorXd s =
        (c.qhat.segment(h * hd, hd).transpose() * c.k.middleRows(h * hd, hd)) * scale;
    const double mx = s.maxCoeff();
    Eigen::RowVectorXd e = (s.array() - mx).exp();
    c.attn.row(h) = e / e.sum();
  }
  c.concat.resize(d);
  for (int h = 0; h < heads; ++h) {
    c.concat.segment(h * hd, hd) = c.v.middleRows(h * hd, hd) * c.attn.row(h).transpose();
  }
  c.y = Wo * c.concat + bo;
  return c;
}

// Backpropagates dY through the attention block; accumulates parameter
// gradients into g and returns the gradient with respect to the tokens.
MatrixXd mha_backward(const Layout& L, const double* th, const MhaCache& c, const VectorXd& dy,
                      double* g) {
  const int d = L.d, heads = L.heads, hd = d / heads;
  const auto n = c.x.cols();
  CMap Wq(th + L.wq, d, d), Wk(th + L.wk, d, d), Wv(th + L.wv, d, d), Wo(th + L.wo, d, d);
  Map dWq(g + L.wq, d, d), dWk(g + L.wk, d, d), dWv(g + L.wv, d, d), dWo(g + L.wo, d, d);
  Eigen::Map<VectorXd> dbq(g + L.bq, d), dbk(g + L.bk, d), dbv(g + L.bv, d), dbo(g + L.bo, d);

  dWo += dy * c.concat.transpose();
  dbo += dy;
  const VectorXd dconcat = Wo.transpose() * dy;

  VectorXd dqhat = VectorXd::Zero(d);
  MatrixXd dk = MatrixXd::Zero(d, n), dv = MatrixXd::Zero(d, n);
  const double scale = 1.0 / std::sqrt(double(hd));
  for (int h = 0; h < heads; ++h) {
    const auto doh = dconcat.segment(h * hd, hd);
    const auto vh = c.v.middleRows(h * hd, hd);
    const auto kh = c.k.middleRows(h * hd, hd);
    const Eigen::RowVectorXd da = doh.transpose() * vh;  // 1 x n
    dv.middleRows(h * hd, hd) += doh * c.attn.row(h);
    const double dot = (c.attn.row(h).array() * da.array()).sum();
    const Eigen::RowVectorXd ds = c.attn.row(h).array() * (da.array() - dot);
    dqhat.segment(h * hd, hd) += kh * ds.transpose() * scale;
    dk.middleRows(h * hd, hd) += (c.qhat.segment(h * hd, hd) * ds) * scale;
  }
  dWq += dqhat * c.query.transpose();
  dbq += dqhat;
  dWk += dk * c.x.transpose();
  dbk += dk.rowwise().sum();
  dWv += dv * c.x.transpose();
  dbv += dv.rowwise().sum();
  return Wk.transpose() * dk + Wv.transpose() * dv;
}

struct SampleCache {
  MatrixXd feats;   // 4 x L relative features
  MatrixXd a1;      // hidden x L tanh activations
  MhaCache mha;
  Eigen::Vector3d out;
};

// tokens and query for one tracklet/query pair, relative to the last state
void build_inputs(const Tracklet& tr, double t_query, const EstimatorHyperparams& hp,
                  MatrixXd& feats, MatrixXd& codes, VectorXd& query) {
  const auto& last = tr.states.back();
  const auto n = Eigen::Index(tr.states.size());
  feats.resize(4, n);
  codes.resize(hp.d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& s = tr.states[j];
    const double da = wrap_angle(s.heading - last.heading);
    feats(0, j) = (s.x - last.x) / hp.pos_scale;
    feats(1, j) = (s.y - last.y) / hp.pos_scale;
    feats(2, j) = std::cos(da);
    feats(3, j) = std::sin(da);
    if (hp.time_encoding) {
      const TimeCode u = time_encode((s.t - last.t) / hp.time_unit, hp.d);
      codes.col(j) = Eigen::Map<const VectorXd>(u.values.data(), hp.d);
    } else {
      codes.col(j).setZero();
    }
  }
  if (hp.time_encoding) {
    const TimeCode uq = time_encode((t_query - last.t) / hp.time_unit, hp.d);
    query = Eigen::Map<const VectorXd>(uq.values.data(), hp.d);
  } else {
    query = VectorXd::Zero(hp.d);
  }
}

SampleCache forward_sample(const Layout& L, const EstimatorParams& p, const Tracklet& tr,
                           double t_query) {
  const double* th = p.theta.data();
  SampleCache sc;
  MatrixXd codes;
  VectorXd query;
  build_inputs(tr, t_query, p.hyper, sc.feats, codes, query);
  CMap W1(th + L.w1, L.hidden, 4), W2(th + L.w2, L.d, L.hidden);
  Eigen::Map<const VectorXd> b1(th + L.b1, L.hidden), b2(th + L.b2, L.d);
  sc.a1 = (((W1 * sc.feats).colwise() + b1).array().tanh()).matrix();
  MatrixXd tokens = ((W2 * sc.a1).colwise() + b2) + codes;
  sc.mha = mha_run(L, th, query, tokens);
  CMap Wh(th + L.wh, 3, L.d);
  Eigen::Map<const VectorXd> bh(th + L.bh, 3);
  sc.out = Wh * sc.mha.y + bh;
  return sc;
}

void backward_sample(const Layout& L, const EstimatorParams& p, const SampleCache& sc,
                     const Eigen::Vector3d& dout, double* g) {
  const double* th = p.theta.data();
  CMap Wh(th + L.wh, 3, L.d), W2(th + L.w2, L.d, L.hidden);
  Map dWh(g + L.wh, 3, L.d), dW2(g + L.w2, L.d, L.hidden), dW1(g + L.w1, L.hidden, 4);
  Eigen::Map<VectorXd> dbh(g + L.bh, 3), db2(g + L.b2, L.d), db1(g + L.b1, L.hidden);

  dWh += dout * sc.mha.y.transpose();
  dbh += dout;
  const VectorXd dy = Wh.transpose() * dout;
  const MatrixXd dtokens = mha_backward(L, th, sc.mha, dy, g);
  // token = W2 * a1 + b2 + time code
  dW2 += dtokens * sc.a1.transpose();
  db2 += dtokens.rowwise().sum();
  const MatrixXd da1 = W2.transpose() * dtokens;
  const MatrixXd dz1 = da1.array() * (1.0 - sc.a1.array().square());
  dW1 += dz1 * sc.feats.transpose();
  db1 += dz1.rowwise().sum();
}

double sample_loss(const EstimatorParams& p, const SampleCache& sc, const TrainingSample& s,
                   Eigen::Vector3d* dout) {
  const auto& hp = p.hyper;
  const auto& last = s.tracklet.states.back();
  const double px = last.x + sc.out(0) * hp.out_scale;
  const double py = last.y + sc.out(1) * hp.out_scale;
  const double ph = wrap_angle(last.heading + sc.out(2));
  const double ex = (px - s.target_x) / hp.cell;
  const double ey = (py - s.target_y) / hp.cell;
  const double ea = wrap_angle(ph - s.target_heading);
  if (dout) {
    (*dout)(0) = 2.0 * ex * (hp.out_scale / hp.cell);
    (*dout)(1) = 2.0 * ey * (hp.out_scale / hp.cell);
    (*dout)(2) = 2.0 * hp.angle_weight * ea;
  }
  return ex * ex + ey * ey + hp.angle_weight * ea * ea;
}

}  // namespace

std::size_t EstimatorParams::param_count() const { return Layout(hyper).total; }

EstimatorParams EstimatorParams::init(const EstimatorHyperparams& hyper, uint64_t rng_seed) {
  const Layout L(hyper);
  EstimatorParams p;
  p.hyper = hyper;
  p.theta.assign(L.total, 0.0);
  auto rng = make_rng(rng_seed);
  auto fill = [&](std::size_t off, int rows, int cols) {
    const double lim = std::sqrt(6.0 / double(rows + cols));
    std::uniform_real_distribution<double> u(-lim, lim);
    for (int i = 0; i < rows * cols; ++i) p.theta[off + i] = u(rng);
  };
  fill(L.w1, L.hidden, 4);
  fill(L.w2, L.d, L.hidden);
  fill(L.wq, L.d, L.d);
  fill(L.wk, L.d, L.d);
  fill(L.wv, L.d, L.d);
  fill(L.wo, L.d, L.d);
  // output head starts at zero: the untrained model predicts zero motion
  return p;
}

Eigen::VectorXd mha_forward(const Eigen::VectorXd& query_code,
                            const std::vector<std::pair<Eigen::VectorXd, TimeCode>>& tokens,
                            const EstimatorParams& params) {
  const Layout L(params.hyper);
  if (tokens.empty()) throw std::invalid_argument("mha_forward: empty token list");
  if (query_code.size() != L.d) throw std::invalid_argument("mha_forward: query dimension");
  MatrixXd x(L.d, Eigen::Index(tokens.size()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const auto& [feat, code] = tokens[std::size_t(j)];
    if (feat.size() != L.d || int(code.values.size()) != L.d)
      throw std::invalid_argument("mha_forward: token dimension");
    x.col(j) = feat + Eigen::Map<const VectorXd>(code.values.data(), L.d);
  }
  return mha_run(L, params.theta.data(), query_code, x).y;
}

void mha_output_sqnorm_grad(const Eigen::VectorXd& query_code,
                            const std::vector<std::pair<Eigen::VectorXd, TimeCode>>& tokens,
                            const EstimatorParams& params, std::vector<double>& grad) {
  const Layout L(params.hyper);
  MatrixXd x(L.d, Eigen::Index(tokens.size()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const auto& [feat, code] = tokens[std::size_t(j)];
    x.col(j) = feat + Eigen::Map<const VectorXd>(code.values.data(), L.d);
  }
  grad.assign(L.total, 0.0);
  const MhaCache c = mha_run(L, params.theta.data(), query_code, x);
  mha_backward(L, params.theta.data(), c, 2.0 * c.y, grad.data());
}

PosePrediction identity_prediction(const Tracklet& tr) {
  const auto& last = tr.states.back();
  PosePrediction p;
  p.track_id = tr.track_id;
  p.x = last.x;
  p.y = last.y;
  p.heading = last.heading;
  p.source_box = tr.last_box;
  p.zero_motion_fallback = true;
  return p;
}

PosePrediction estimate_pose(const Tracklet& tracklet, double t_query,
                             const EstimatorParams& params) {
  if (tracklet.states.empty()) throw std::invalid_argument("estimate_pose: empty tracklet");
  if (tracklet.states.size() == 1) return identity_prediction(tracklet);
  if (t_query < tracklet.states.back().t - 1e-9)
    throw std::invalid_argument("estimate_pose: t_query before last state");
  const Layout L(params.hyper);
  const SampleCache sc = forward_sample(L, params, tracklet, t_query);
  const auto& last = tracklet.states.back();
  PosePrediction p;
  p.track_id = tracklet.track_id;
  p.x = last.x + sc.out(0) * params.hyper.out_scale;
  p.y = last.y + sc.out(1) * params.hyper.out_scale;
  p.heading = wrap_angle(last.heading + sc.out(2));
  p.source_box = tracklet.last_box;
  return p;
}

PosePrediction estimate_pose_cv(const Tracklet& tracklet, double t_query) {
  if (tracklet.states.empty()) throw std::invalid_argument("estimate_pose_cv: empty tracklet");
  if (tracklet.states.size() == 1) return identity_prediction(tracklet);
  const auto& states = tracklet.states;
  const auto& last = states.back();
  const double t0 = last.t;
  double st = 0, sx = 0, sy = 0, stt = 0, stx = 0, sty = 0;
  const double n = double(states.size());
  for (const auto& s : states) {
    const double t = s.t - t0;
    st += t; sx += s.x; sy += s.y;
    stt += t * t; stx += t * s.x; sty += t * s.y;
  }
  const double denom = n * stt - st * st;
  double vx = 0.0, vy = 0.0, x0 = last.x, y0 = last.y;
  if (std::fabs(denom) > 1e-12) {
    vx = (n * stx - st * sx) / denom;
    vy = (n * sty - st * sy) / denom;
    x0 = (sx - vx * st) / n;
    y0 = (sy - vy * st) / n;
  }
  const auto& prev = states[states.size() - 2];
  const double dt_h = last.t - prev.t;
  const double rate = (dt_h > 0.0) ? wrap_angle(last.heading - prev.heading) / dt_h : 0.0;

  PosePrediction p;
  p.track_id = tracklet.track_id;
  const double tq = t_query - t0;
  p.x = x0 + vx * tq;
  p.y = y0 + vy * tq;
  p.heading = wrap_angle(last.heading + rate * (t_query - last.t));
  p.source_box = tracklet.last_box;
  return p;
}

double estimator_loss(const EstimatorParams& params, const std::vector<TrainingSample>& batch) {
  if (batch.empty()) throw std::invalid_argument("estimator_loss: empty batch");
  const Layout L(params.hyper);
  double loss = 0.0;
  for (const auto& s : batch) {
    const SampleCache sc = forward_sample(L, params, s.tracklet, s.t_query);
    loss += sample_loss(params, sc, s, nullptr);
  }
  return loss / double(batch.size());
}

double estimator_loss_grad(const EstimatorParams& params,
                           const std::vector<TrainingSample>& batch,
                           std::vector<double>& grad) {
  if (batch.empty()) throw std::invalid_argument("estimator_loss_grad: empty batch");
  const Layout L(params.hyper);
  grad.assign(L.total, 0.0);
  double loss = 0.0;
  Eigen::Vector3d dout;
  for (const auto& s : batch) {
    const SampleCache sc = forward_sample(L, params, s.tracklet, s.t_query);
    loss += sample_loss(params, sc, s, &dout);
    backward_sample(L, params, sc, dout, grad.data());
  }
  const double inv = 1.0 / double(batch.size());
  for (auto& g : grad) g *= inv;
  return loss * inv;
}

TrainReport train_estimator(const std::vector<TrainingSample>& dataset,
                            const EstimatorHyperparams& hyper, uint64_t rng_seed) {
  if (dataset.empty()) throw std::invalid_argument("train_estimator: empty dataset");
  for (const auto& s : dataset) {
    if (s.tracklet.states.empty())
      throw std::invalid_argument("train_estimator: sample with empty tracklet");
  }
  TrainReport report;
  report.params = EstimatorParams::init(hyper, rng_seed);
  report.initial_loss = estimator_loss(report.params, dataset);
  std::vector<double> grad;
  std::vector<double> velocity(report.params.theta.size(), 0.0);
  double loss = report.initial_loss;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    loss = estimator_loss_grad(report.params, dataset, grad);
    if (!std::isfinite(loss)) {
      report.diverged = true;
      break;
    }
    double norm2 = 0.0;
    for (double g : grad) norm2 += g * g;
    const double norm = std::sqrt(norm2);
    const double scale =
        (hyper.clip_norm > 0.0 && norm > hyper.clip_norm) ? hyper.clip_norm / norm : 1.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      velocity[i] = hyper.momentum * velocity[i] + scale * grad[i];
      report.params.theta[i] -= hyper.learning_rate * velocity[i];
    }
  }
  report.final_loss = report.diverged ? loss : estimator_loss(report.params, dataset);
  return report;
}

BevFlowMap build_flow_map(const std::vector<PosePrediction>& predictions,
                          const GridSpec& spec) {
  BevFlowMap flow(spec);
  std::vector<const PosePrediction*> order;
  order.reserve(predictions.size());
  for (const auto& p : predictions) order.push_back(&p);
  std::sort(order.begin(), order.end(), [](const PosePrediction* a, const PosePrediction* b) {
    if (a->source_box.confidence != b->source_box.confidence)
      return a->source_box.confidence > b->source_box.confidence;
    return a->track_id < b->track_id;
  });

  std::vector<char> claimed(spec.cell_count(), 0);
  for (const PosePrediction* p : order) {
    const OrientedBox& src = p->source_box;
    const double dalpha = wrap_angle(p->heading - src.heading);
    const double ca = std::cos(dalpha), sa = std::sin(dalpha);
    for_each_footprint_cell(spec, src, [&](int h, int w) {
      const std::size_t idx = std::size_t(h) * spec.width + w;
      if (claimed[idx]) return;
      claimed[idx] = 1;
      const Vec2 c = spec.cell_center(h, w);
      const double rx = c.x - src.center.x, ry = c.y - src.center.y;
      const double nx = p->x + ca * rx - sa * ry;
      const double ny = p->y + sa * rx + ca * ry;
      float* v = flow.at(h, w);
      v[0] = float((ny - c.y) / spec.cell);  // row displacement (y)
      v[1] = float((nx - c.x) / spec.cell);  // column displacement (x)
    });
  }
  return flow;
}

namespace {
template <typename T>
void put_raw(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void get_raw(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("load_estimator: truncated file");
}
}  // namespace

void save_estimator(const std::string& path, const EstimatorParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_estimator: cannot open " + path);
  const auto& h = params.hyper;
  put_raw(os, uint32_t(1));  // format version
  put_raw(os, uint32_t(h.d));
  put_raw(os, uint32_t(h.n_heads));
  put_raw(os, uint32_t(h.hidden));
  put_raw(os, uint32_t(h.time_encoding ? 1 : 0));
  put_raw(os, h.learning_rate);
  put_raw(os, h.angle_weight);
  put_raw(os, h.pos_scale);
  put_raw(os, h.out_scale);
  put_raw(os, h.time_unit);
  put_raw(os, h.cell);
  put_raw(os, uint32_t(h.epochs));
  put_raw(os, uint64_t(params.theta.size()));
  os.write(reinterpret_cast<const char*>(params.theta.data()),
           std::streamsize(params.theta.size() * sizeof(double)));
}

EstimatorParams load_estimator(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_estimator: cannot open " + path);
  uint32_t version = 0, d = 0, heads = 0, hidden = 0, te = 0, epochs = 0;
  get_raw(is, version);
  if (version != 1) throw std::runtime_error("load_estimator: unsupported version");
  get_raw(is, d);
  get_raw(is, heads);
  get_raw(is, hidden);
  get_raw(is, te);
  EstimatorParams p;
  p.hyper.d = int(d);
  p.hyper.n_heads = int(heads);
  p.hyper.hidden = int(hidden);
  p.hyper.time_encoding = te != 0;
  get_raw(is, p.hyper.learning_rate);
  get_raw(is, p.hyper.angle_weight);
  get_raw(is, p.hyper.pos_scale);
  get_raw(is, p.hyper.out_scale);
  get_raw(is, p.hyper.time_unit);
  get_raw(is, p.hyper.cell);
  get_raw(is, epochs);
  p.hyper.epochs = int(epochs);
  uint64_t count = 0;
  get_raw(is, count);
  if (count != Layout(p.hyper).total)
    throw std::runtime_error("load_estimator: parameter count mismatch");
  p.theta.resize(count);
  is.read(reinterpret_cast<char*>(p.theta.data()), std::streamsize(count * sizeof(double)));
  if (!is) throw std::runtime_error("load_estimator: truncated parameters");
  return p;
}

}  // namespace bevflow
