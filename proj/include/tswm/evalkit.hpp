#pragma once

// Evaluation protocol: FPR-calibrated thresholds, TPR, similarity, trade-off
// points and their Pareto filter, curve fits with a concavity fallback, and
// generator statistics bucketed by preceding-token category.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>
#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>
#include <unsupported/Eigen/LevenbergMarquardt>
#include <unsupported/Eigen/NumericalDiff>

#include "tswm/corpus_lm.hpp"
#include "tswm/detector.hpp"
#include "tswm/error.hpp"
#include "tswm/generators.hpp"
#include "tswm/losses.hpp"
#include "tswm/parallel.hpp"
#include "tswm/pipeline.hpp"

namespace tswm {

// ---- thresholds -----------------------------------------------------------------

/// fpr = 0: just above the largest null z. Otherwise the nearest-rank
/// (1 - fpr) quantile. Verdicts use z > threshold, so ties never fire.
inline double calibrate_threshold(std::span<const double> null_z, double fpr) {
  if (null_z.empty()) throw InputError("empty null sample");
  if (!(fpr >= 0.0 && fpr < 1.0)) throw InputError("fpr must lie in [0,1)");
  std::vector<double> z(null_z.begin(), null_z.end());
  for (double x : z)
    if (!std::isfinite(x)) throw InputError("non-finite null z");
  std::sort(z.begin(), z.end());
  if (fpr == 0.0) return z.back() + 1e-9;
  const double n = static_cast<double>(z.size());
  // the small slack keeps (1 - 0.01) * 100 from rounding up to rank 100
  auto rank = static_cast<std::size_t>(std::ceil((1.0 - fpr) * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, z.size());
  return z[rank - 1];
}

inline double tpr(std::span<const double> wm_z, double threshold) {
  if (wm_z.empty()) throw InputError("empty z list");
  const auto hits = std::count_if(wm_z.begin(), wm_z.end(), [&](double z) { return z > threshold; });
  return static_cast<double>(hits) / static_cast<double>(wm_z.size());
}

/// Cosine of the sentence embeddings of the two sequences' tokens.
inline double similarity(const TokenSeq& wm, const TokenSeq& ref, const SentenceEmbedder& f, const SyntheticLM& model) {
  if (wm.tokens.empty() || ref.tokens.empty()) throw InputError("empty sequence");
  return sequence_similarity(f, model.embeddings(), wm.tokens, ref.tokens);
}

// ---- trade-off points -------------------------------------------------------------

struct TradeoffPoint {
  double mean_z = 0.0;
  double tpr = 0.0;
  double similarity = 0.0;
  std::string id;
};

/// a dominates b when it is no worse on both axes and better on one.
inline bool dominates(double ax, double ay, double bx, double by) noexcept {
  return ax >= bx && ay >= by && (ax > bx || ay > by);
}

/// Points not dominated in (tpr, similarity), input order kept.
inline std::vector<TradeoffPoint> pareto_filter(const std::vector<TradeoffPoint>& pts) {
  if (pts.empty()) throw InputError("empty point set");
  // sort by tpr desc, similarity desc, then sweep keeping the best similarity so far
  std::vector<std::size_t> idx(pts.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (pts[a].tpr != pts[b].tpr) return pts[a].tpr > pts[b].tpr;
    return pts[a].similarity > pts[b].similarity;
  });
  std::vector<bool> keep(pts.size(), false);
  double best_sim = -std::numeric_limits<double>::infinity();
  double best_tpr = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& p = pts[idx[k]];
    // dominated if something earlier has strictly better similarity, or an
    // equal similarity with strictly better tpr
    const bool dominated = p.similarity < best_sim || (p.similarity == best_sim && p.tpr < best_tpr);
    keep[idx[k]] = !dominated;
    if (p.similarity > best_sim) {
      best_sim = p.similarity;
      best_tpr = p.tpr;
    }
  }
  std::vector<TradeoffPoint> out;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (keep[i]) out.push_back(pts[i]);
  return out;
}

// ---- curve fitting ----------------------------------------------------------------

enum class CurveFamily { FiveParamLogistic, Exponential };

inline std::string to_string(CurveFamily f) {
  return f == CurveFamily::FiveParamLogistic ? "FIVE_PARAM_LOGISTIC" : "EXPONENTIAL";
}

struct CurveFit {
  CurveFamily family = CurveFamily::Exponential;
  std::vector<double> params; // 5PL: a, b, c, d, g; exponential: a, b, c
  double rms = 0.0;
  bool concave = false;

  double operator()(double x) const {
    if (family == CurveFamily::FiveParamLogistic) {
      const double a = params[0], b = params[1], c = params[2], d = params[3], g = params[4];
      return d + (a - d) / std::pow(1.0 + std::pow(x / c, b), g);
    }
    return -params[0] * std::exp(params[1] * x) + params[2];
  }
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

namespace detail {

using Vec = Eigen::VectorXd;

// Residual functor over a parametric model for Eigen's LM.
template <class Model>
struct Residuals : Eigen::DenseFunctor<double> {
  const std::vector<Point2>* pts;
  std::decay_t<Model> model;
  Residuals(const std::vector<Point2>& p, Model m, int nparams)
      : DenseFunctor<double>(nparams, static_cast<int>(p.size())), pts(&p), model(m) {}
  int operator()(const Vec& x, Vec& f) const {
    for (std::size_t i = 0; i < pts->size(); ++i) {
      const double r = model(x, (*pts)[i].x) - (*pts)[i].y;
      f[static_cast<Eigen::Index>(i)] = std::isfinite(r) ? r : 1e150;
    }
    return 0;
  }
};

template <class Model>
double rms_of(const std::vector<Point2>& pts, const Model& m, const Vec& x) {
  double s = 0.0;
  for (const auto& p : pts) {
    const double r = m(x, p.x) - p.y;
    s += r * r;
  }
  const double v = std::sqrt(s / static_cast<double>(pts.size()));
  return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
}

template <class Model>
Vec lm_refine(const std::vector<Point2>& pts, const Model& m, Vec x) {
  Residuals<Model> r(pts, m, static_cast<int>(x.size()));
  Eigen::NumericalDiff<Residuals<Model>, Eigen::Central> nd(r);
  Eigen::LevenbergMarquardt<decltype(nd)> lm(nd);
  lm.setMaxfev(4000);
  lm.setXtol(1e-14);
  lm.setFtol(1e-14);
  lm.minimize(x);
  return x;
}

// y = c1 * u + c0 * v by least squares (2x2 normal equations); false if singular.
inline bool linear2(const std::vector<Point2>& pts, const std::vector<double>& u, const std::vector<double>& v,
                    double& c1, double& c0) {
  double uu = 0, uv = 0, vv = 0, uy = 0, vy = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    uu += u[i] * u[i];
    uv += u[i] * v[i];
    vv += v[i] * v[i];
    uy += u[i] * pts[i].y;
    vy += v[i] * pts[i].y;
  }
  const double det = uu * vv - uv * uv;
  if (!(std::abs(det) > 1e-300) || !std::isfinite(det)) return false;
  c1 = (uy * vv - vy * uv) / det;
  c0 = (vy * uu - uy * uv) / det;
  return std::isfinite(c1) && std::isfinite(c0);
}

// exponential in (a, b, c)
inline double exp_model(const Vec& p, double x) { return -p[0] * std::exp(p[1] * x) + p[2]; }

// 5PL in (a, b, log c, d, log g) so c, g stay positive
inline double five_pl_model(const Vec& p, double x) {
  return p[3] + (p[0] - p[3]) / std::pow(1.0 + std::pow(x / std::exp(p[2]), p[1]), std::exp(p[4]));
}

inline double span_of(const std::vector<Point2>& pts) {
  const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.x < b.x; });
  return std::max(hi->x - lo->x, 1e-12);
}

} // namespace detail

/// Second differences on a 100-point grid over [lo, hi] all <= tol.
inline bool is_concave(const CurveFit& fit, double lo, double hi, double tol = 1e-9) {
  const int n = 100;
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) y[i] = fit(lo + (hi - lo) * i / (n - 1));
  for (int i = 1; i + 1 < n; ++i) {
    const double dd = y[i - 1] - 2.0 * y[i] + y[i + 1];
    if (!std::isfinite(dd) || dd > tol) return false;
  }
  return true;
}

/// y = -a e^{bx} + c. For each b on a grid, (a, c) solve linearly; the
/// best start is polished by Levenberg-Marquardt.
inline std::optional<CurveFit> fit_exponential(const std::vector<Point2>& pts) {
  if (pts.size() < 3) throw InputError("exponential fit needs at least 3 points");
  const double w = detail::span_of(pts);
  detail::Vec best;
  double best_rms = std::numeric_limits<double>::infinity();
  std::vector<double> u(pts.size()), ones(pts.size(), 1.0);
  for (int k = -60; k <= 60; ++k) {
    if (k == 0) continue;
    const double b = (k / 6.0) / w; // |b w| up to 10
    for (std::size_t i = 0; i < pts.size(); ++i) u[i] = -std::exp(b * pts[i].x);
    double a, c;
    if (!detail::linear2(pts, u, ones, a, c)) continue;
    detail::Vec x(3);
    x << a, b, c;
    x = detail::lm_refine(pts, detail::exp_model, x);
    const double r = detail::rms_of(pts, detail::exp_model, x);
    if (r < best_rms) {
      best_rms = r;
      best = x;
    }
  }
  if (!std::isfinite(best_rms)) return std::nullopt;
  CurveFit f{CurveFamily::Exponential, {best[0], best[1], best[2]}, best_rms, false};
  return f;
}

/// y = d + (a - d) / (1 + (x/c)^b)^g on x > 0. Multi-start over (b, c, g)
/// with (a, d) solved linearly, then joint Levenberg-Marquardt.
inline std::optional<CurveFit> fit_five_pl(const std::vector<Point2>& pts) {
  if (pts.size() < 5) throw InputError("5PL fit needs at least 5 points");
  for (const auto& p : pts)
    if (!(p.x > 0.0)) return std::nullopt; // (x/c)^b undefined
  const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.x < b.x; });
  const double xl = lo->x, xh = hi->x;
  detail::Vec best;
  double best_rms = std::numeric_limits<double>::infinity();
  std::vector<double> h(pts.size()), one_minus(pts.size());
  for (double cf : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    const double c = xl + (xh - xl) * 0.5 * cf + 1e-12;
    for (double b : {-8.0, -4.0, -2.0, -1.0, 1.0, 2.0, 4.0, 8.0}) {
      for (double g : {0.25, 1.0, 4.0}) {
        for (std::size_t i = 0; i < pts.size(); ++i) {
          h[i] = 1.0 / std::pow(1.0 + std::pow(pts[i].x / c, b), g);
          one_minus[i] = 1.0 - h[i];
        }
        double a, d;
        if (!detail::linear2(pts, h, one_minus, a, d)) continue;
        detail::Vec x(5);
        x << a, b, std::log(c), d, std::log(g);
        x = detail::lm_refine(pts, detail::five_pl_model, x);
        const double r = detail::rms_of(pts, detail::five_pl_model, x);
        if (r < best_rms) {
          best_rms = r;
          best = x;
        }
      }
    }
  }
  if (!std::isfinite(best_rms)) return std::nullopt;
  CurveFit f{CurveFamily::FiveParamLogistic, {best[0], best[1], std::exp(best[2]), best[3], std::exp(best[4])},
             best_rms, false};
  for (double p : f.params)
    if (!std::isfinite(p)) return std::nullopt;
  return f;
}

/// 5PL first; if it is not concave over the data range, fall back to the
/// exponential. When both are concave the smaller residual wins.
inline CurveFit fit_tradeoff(const std::vector<Point2>& pts) {
  if (pts.size() < 3) throw InputError("curve fit needs at least 3 points");
  const auto [lo, hi] = std::minmax_element(pts.begin(), pts.end(), [](auto& a, auto& b) { return a.x < b.x; });
  const double xl = lo->x, xh = hi->x;
  std::optional<CurveFit> five = pts.size() >= 5 ? fit_five_pl(pts) : std::nullopt;
  std::optional<CurveFit> expo = fit_exponential(pts);
  if (five) five->concave = is_concave(*five, xl, xh);
  if (expo) expo->concave = is_concave(*expo, xl, xh);
  if (!five && !expo) throw FitError("neither the 5PL nor the exponential fit converged on " +
                                     std::to_string(pts.size()) + " points");
  if (five && five->concave) {
    if (expo && expo->concave && expo->rms < five->rms) return *expo;
    return *five;
  }
  if (!expo) throw FitError("5PL fit is not concave and the exponential fit did not converge");
  return *expo;
}

inline nlohmann::json to_json(const CurveFit& f) {
  return {{"family", to_string(f.family)}, {"params", f.params}, {"rms", f.rms}, {"concave", f.concave}};
}

/// `n` samples of the fitted curve over [lo, hi] as CSV with header x,y.
inline std::string curve_csv(const CurveFit& f, double lo, double hi, int n = 100) {
  std::ostringstream os;
  os.precision(17);
  os << "x,y\n";
  for (int i = 0; i < n; ++i) {
    const double x = n == 1 ? lo : lo + (hi - lo) * i / (n - 1);
    os << x << ',' << f(x) << '\n';
  }
  return os.str();
}

// ---- bucket statistics ----------------------------------------------------------------

struct BucketStats {
  std::size_t count = 0;
  double mean_gamma = 0.0;
  double std_gamma = 0.0;
  double mean_delta = 0.0;
  double std_delta = 0.0;
  std::vector<double> gammas; // raw emissions, for tests of difference
  std::vector<double> deltas;
};

namespace detail {

inline void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
  mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
}

} // namespace detail

inline std::vector<std::string> category_labels(const SyntheticLM& m) {
  std::vector<std::string> out;
  for (auto c : m.categories()) out.emplace_back(to_string(c));
  return out;
}

/// Generator outputs at every scored position, grouped by the label of the
/// preceding token. Standard deviations use the n - 1 denominator.
inline std::map<std::string, BucketStats> bucket_stats(const std::vector<TokenSeq>& texts, const GeneratorNet& gamma_net,
                                                       const GeneratorNet& delta_net, const EmbeddingTable& emb,
                                                       const std::vector<std::string>& labels) {
  std::map<std::string, BucketStats> out;
  for (const auto& t : texts) {
    for (std::size_t i = 0; i + 1 < t.tokens.size(); ++i) {
      const TokenId prev = t.tokens[i];
      if (prev >= labels.size() || prev >= emb.vocab_size()) throw InputError("token id not covered by the category map");
      auto& b = out[labels[prev]];
      const auto e = emb.row(prev);
      b.gammas.push_back(gamma_net.forward(e));
      b.deltas.push_back(delta_net.forward(e));
    }
  }
  for (auto& [_, b] : out) {
    b.count = b.gammas.size();
    detail::mean_sd(b.gammas, b.mean_gamma, b.std_gamma);
    detail::mean_sd(b.deltas, b.mean_delta, b.std_delta);
  }
  return out;
}

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p_less = 0.0; // one-sided p for H1: mean(a) < mean(b)
};

inline WelchResult welch_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw InputError("Welch test needs at least 2 samples per group");
  double ma, sa, mb, sb;
  detail::mean_sd(a, ma, sa);
  detail::mean_sd(b, mb, sb);
  const double va = sa * sa / static_cast<double>(a.size());
  const double vb = sb * sb / static_cast<double>(b.size());
  if (!(va + vb > 0.0)) throw NumericError("Welch test on two constant samples");
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) /
         (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  r.p_less = boost::math::cdf(boost::math::students_t(r.df), r.t);
  return r;
}

inline nlohmann::json to_json(const std::map<std::string, BucketStats>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, b] : m)
    j[k] = {{"count", b.count},
            {"mean_gamma", b.mean_gamma},
            {"std_gamma", b.std_gamma},
            {"mean_delta", b.mean_delta},
            {"std_delta", b.std_delta}};
  return j;
}

// ---- end-to-end evaluation ---------------------------------------------------------------

struct EvalSettings {
  std::size_t prompts = 200;
  std::size_t prompt_length = 20;
  std::size_t length = 200;
  std::size_t null_count = 500;
  std::uint64_t seed = 7;
  std::uint64_t key = 0x7a6b5c4d;
  std::size_t sentence_dim = 16;
  std::uint64_t embedder_seed = 0x5e17;
};

inline nlohmann::json to_json(const EvalSettings& s) {
  return {{"prompts", s.prompts},           {"prompt_length", s.prompt_length}, {"length", s.length},
          {"null_count", s.null_count},     {"seed", s.seed},                   {"key", s.key},
          {"sentence_dim", s.sentence_dim}, {"embedder_seed", s.embedder_seed}};
}

inline EvalSettings eval_settings_from_json(const nlohmann::json& j, EvalSettings s = {}) {
  if (!j.is_object()) throw ConfigError("evaluate config must be a JSON object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "prompts") s.prompts = v.get<std::size_t>();
      else if (k == "prompt_length") s.prompt_length = v.get<std::size_t>();
      else if (k == "length") s.length = v.get<std::size_t>();
      else if (k == "null_count") s.null_count = v.get<std::size_t>();
      else if (k == "seed") s.seed = v.get<std::uint64_t>();
      else if (k == "key") s.key = v.get<std::uint64_t>();
      else if (k == "sentence_dim") s.sentence_dim = v.get<std::size_t>();
      else if (k == "embedder_seed") s.embedder_seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown evaluate config field: " + k);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad evaluate config: ") + e.what());
  }
  if (s.prompts < 1 || s.null_count < 1 || s.prompt_length < 1 || s.length < 2 || s.sentence_dim < 1)
    throw ConfigError("evaluate config sizes must be positive (length >= 2)");
  return s;
}

struct EvalReport {
  double threshold_0 = 0.0;
  double threshold_1 = 0.0;
  double tpr_0 = 0.0;
  double tpr_1 = 0.0;
  double sim_mean = 0.0;
  double sim_std = 0.0;
  double mean_z = 0.0;
  std::vector<double> null_z;
  std::vector<double> wm_z;
  std::map<std::string, BucketStats> buckets; // generator outputs by context category
};

/// Null z from human-surrogate samples on a separate seed stream, then
/// watermarked generation, detection and similarity against the
/// unwatermarked sample drawn with the same seed.
inline EvalReport evaluate_pair(const SyntheticLM& model, const GeneratorPair& pair, const EvalSettings& s,
                                std::size_t jobs = 1) {
  if (s.prompts < 1 || s.null_count < 1) throw ConfigError("evaluation needs prompts and null samples");
  const PartitionKey key{s.key};
  const SentenceEmbedder f(model.embed_dim(), s.sentence_dim, s.embedder_seed);
  const auto null_prompts = make_prompts(model, s.null_count, s.prompt_length, derive_seed(s.seed, 1));
  const auto prompts = make_prompts(model, s.prompts, s.prompt_length, derive_seed(s.seed, 2));
  EvalReport r;
  r.null_z.resize(s.null_count);
  parallel_for(s.null_count, jobs, [&](std::size_t i) {
    const auto h = sample_unwatermarked(model, null_prompts[i], s.length, derive_seed(derive_seed(s.seed, 3), i),
                                        Origin::Human);
    r.null_z[i] = detect(h, pair.gamma, model.embeddings(), key, 0.0).z;
  });
  r.wm_z.resize(s.prompts);
  std::vector<double> sims(s.prompts);
  std::vector<TokenSeq> texts(s.prompts);
  parallel_for(s.prompts, jobs, [&](std::size_t i) {
    const std::uint64_t gs = derive_seed(derive_seed(s.seed, 4), i);
    const auto wm = generate_watermarked(model, pair.gamma, pair.delta, key, prompts[i], s.length, gs);
    const auto ref = sample_unwatermarked(model, prompts[i], s.length, gs);
    r.wm_z[i] = detect(wm.text, pair.gamma, model.embeddings(), key, 0.0).z;
    sims[i] = sequence_similarity(f, model.embeddings(), continuation(wm.text), continuation(ref));
    texts[i] = wm.text;
  });
  r.buckets = bucket_stats(texts, pair.gamma, pair.delta, model.embeddings(), category_labels(model));
  r.threshold_0 = calibrate_threshold(r.null_z, 0.0);
  r.threshold_1 = calibrate_threshold(r.null_z, 0.01);
  r.tpr_0 = tpr(r.wm_z, r.threshold_0);
  r.tpr_1 = tpr(r.wm_z, r.threshold_1);
  detail::mean_sd(sims, r.sim_mean, r.sim_std);
  r.mean_z = std::accumulate(r.wm_z.begin(), r.wm_z.end(), 0.0) / static_cast<double>(r.wm_z.size());
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"thresholds", {{"fpr_0", r.threshold_0}, {"fpr_1", r.threshold_1}}},
          {"tpr", {{"fpr_0", r.tpr_0}, {"fpr_1", r.tpr_1}}},
          {"similarity", {{"mean", r.sim_mean}, {"std", r.sim_std}}},
          {"mean_z", r.mean_z},
          {"null_count", r.null_z.size()},
          {"watermarked_count", r.wm_z.size()},
          {"buckets", to_json(r.buckets)}};
}

inline nlohmann::json to_json(const TradeoffPoint& p) {
  return {{"id", p.id}, {"mean_z", p.mean_z}, {"tpr", p.tpr}, {"similarity", p.similarity}};
}

} // namespace tswm
