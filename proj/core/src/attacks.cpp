#include "clicooper/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "clicooper/rng.hpp"

namespace clicooper::attacks {

namespace {

// Dense pairwise Euclidean distances; desk-scale inputs keep this small.
std::vector<double> pairwise_distances(const TensorF64& X) {
    const size_t n = X.rows();
    const size_t d = X.cols();
    std::vector<double> dist(n * n, 0.0);
    for (size_t i = 0; i < n; ++i) {
        const double* xi = &X.values[i * d];
        for (size_t j = i + 1; j < n; ++j) {
            const double* xj = &X.values[j * d];
            double acc = 0.0;
            for (size_t c = 0; c < d; ++c) {
                double diff = xi[c] - xj[c];
                acc += diff * diff;
            }
            double v = std::sqrt(acc);
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    return dist;
}

struct KmeansRun {
    std::vector<int32_t> assign;
    std::vector<double> centroids; // k x d
    uint32_t k;
};

KmeansRun lloyd(const TensorF64& X, uint32_t k, uint64_t seed) {
    const size_t n = X.rows();
    const size_t d = X.cols();
    CounterRng rng(seed);

    // k-means++ seeding.
    std::vector<double> centroids(k * d);
    std::vector<double> min_d2(n, std::numeric_limits<double>::max());
    size_t first = rng.below(n);
    std::copy(&X.values[first * d], &X.values[first * d] + d, centroids.begin());
    for (uint32_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double* xi = &X.values[i * d];
            const double* cc = &centroids[(c - 1) * d];
            double acc = 0.0;
            for (size_t j = 0; j < d; ++j) {
                double diff = xi[j] - cc[j];
                acc += diff * diff;
            }
            min_d2[i] = std::min(min_d2[i], acc);
            total += min_d2[i];
        }
        size_t pick = 0;
        if (total > 0.0) {
            double r = rng.uniform() * total;
            double run = 0.0;
            for (size_t i = 0; i < n; ++i) {
                run += min_d2[i];
                if (run >= r) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.below(n);
        }
        std::copy(&X.values[pick * d], &X.values[pick * d] + d, centroids.begin() + c * d);
    }

    std::vector<int32_t> assign(n, -1);
    for (uint32_t iter = 0; iter < 200; ++iter) {
        bool changed = false;
        for (size_t i = 0; i < n; ++i) {
            const double* xi = &X.values[i * d];
            int32_t best = 0;
            double best_d = std::numeric_limits<double>::max();
            for (uint32_t c = 0; c < k; ++c) {
                const double* cc = &centroids[c * d];
                double acc = 0.0;
                for (size_t j = 0; j < d; ++j) {
                    double diff = xi[j] - cc[j];
                    acc += diff * diff;
                }
                if (acc < best_d) {
                    best_d = acc;
                    best = static_cast<int32_t>(c);
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        std::vector<double> sums(k * d, 0.0);
        std::vector<size_t> counts(k, 0);
        for (size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            const double* xi = &X.values[i * d];
            double* sc = &sums[static_cast<size_t>(assign[i]) * d];
            for (size_t j = 0; j < d; ++j) sc[j] += xi[j];
        }
        for (uint32_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue; // empty cluster keeps its centroid
            double* cc = &centroids[c * d];
            const double* sc = &sums[c * d];
            for (size_t j = 0; j < d; ++j) cc[j] = sc[j] / counts[c];
        }
        if (!changed) break;
    }
    return {std::move(assign), std::move(centroids), k};
}

double mean_silhouette(const std::vector<int32_t>& assign, uint32_t k, const std::vector<double>& dist,
                       size_t n) {
    std::vector<size_t> counts(k, 0);
    for (int32_t a : assign) ++counts[a];
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        std::vector<double> sum_to(k, 0.0);
        for (size_t j = 0; j < n; ++j)
            if (j != i) sum_to[assign[j]] += dist[i * n + j];
        const uint32_t own = assign[i];
        if (counts[own] <= 1) continue; // singleton: s(i) = 0
        double a = sum_to[own] / (counts[own] - 1);
        double b = std::numeric_limits<double>::max();
        for (uint32_t c = 0; c < k; ++c) {
            if (c == own || counts[c] == 0) continue;
            b = std::min(b, sum_to[c] / counts[c]);
        }
        if (b == std::numeric_limits<double>::max()) continue;
        double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(n);
}

} // namespace

ClusterOutcome kmeans_auto(const TensorF64& X, const std::vector<uint32_t>& k_range, uint64_t seed) {
    const size_t n = X.rows();
    if (k_range.empty()) throw std::invalid_argument("kmeans_auto: empty k range");
    for (uint32_t k : k_range) {
        if (k < 1) throw std::invalid_argument("kmeans_auto: k must be >= 1");
        if (n < k) throw std::invalid_argument("kmeans_auto: fewer rows than k=" + std::to_string(k));
    }

    std::vector<double> dist = pairwise_distances(X);
    bool all_identical = std::all_of(dist.begin(), dist.end(), [](double v) { return v == 0.0; });
    if (all_identical) {
        // Silhouette is undefined; collapse to a single cluster.
        ClusterOutcome out;
        out.assignments.assign(n, 0);
        out.k_found = 1;
        return out;
    }

    ClusterOutcome best;
    double best_score = -std::numeric_limits<double>::max();
    for (uint32_t k : k_range) {
        KmeansRun run = lloyd(X, k, mix_seed(seed, k));
        double score = k == 1 ? -1.0 : mean_silhouette(run.assign, k, dist, n);
        if (score > best_score) {
            best_score = score;
            best.assignments = std::move(run.assign);
            best.k_found = k;
        }
    }
    return best;
}

ClusterOutcome dbscan(const TensorF64& X, uint32_t min_pts, double eps_override) {
    if (min_pts < 2) throw std::invalid_argument("dbscan: minPts must be >= 2");
    const size_t n = X.rows();
    if (n == 0) throw std::invalid_argument("dbscan: empty input");
    std::vector<double> dist = pairwise_distances(X);

    double eps = eps_override;
    if (eps <= 0.0) {
        // k-distance elbow heuristic, k = minPts: sort the k-th neighbor
        // distances descending, take the point farthest from the chord.
        std::vector<double> kdist(n);
        for (size_t i = 0; i < n; ++i) {
            std::vector<double> row;
            row.reserve(n - 1);
            for (size_t j = 0; j < n; ++j)
                if (j != i) row.push_back(dist[i * n + j]);
            size_t k = std::min<size_t>(min_pts - 1, row.size() - 1);
            std::nth_element(row.begin(), row.begin() + k, row.end());
            kdist[i] = row[k];
        }
        std::sort(kdist.begin(), kdist.end(), std::greater<double>());
        eps = kdist.back();
        if (kdist.front() > kdist.back()) {
            const double x0 = 0.0, y0 = kdist.front();
            const double x1 = static_cast<double>(n - 1), y1 = kdist.back();
            double best = -1.0;
            for (size_t i = 0; i < n; ++i) {
                // Distance from (i, kdist[i]) to the chord, up to a factor.
                double num =
                    std::abs((y1 - y0) * static_cast<double>(i) - (x1 - x0) * kdist[i] + x1 * y0 - y1 * x0);
                if (num > best) {
                    best = num;
                    eps = kdist[i];
                }
            }
        }
    }

    std::vector<int32_t> label(n, -2); // -2 unvisited, -1 noise
    int32_t cluster = 0;
    std::vector<size_t> stack;
    for (size_t i = 0; i < n; ++i) {
        if (label[i] != -2) continue;
        std::vector<size_t> neigh;
        for (size_t j = 0; j < n; ++j)
            if (dist[i * n + j] <= eps) neigh.push_back(j); // includes i itself
        if (neigh.size() < min_pts) {
            label[i] = -1;
            continue;
        }
        label[i] = cluster;
        stack.assign(neigh.begin(), neigh.end());
        while (!stack.empty()) {
            size_t p = stack.back();
            stack.pop_back();
            if (label[p] == -1) label[p] = cluster; // border point
            if (label[p] != -2) continue;
            label[p] = cluster;
            std::vector<size_t> pn;
            for (size_t j = 0; j < n; ++j)
                if (dist[p * n + j] <= eps) pn.push_back(j);
            if (pn.size() >= min_pts)
                stack.insert(stack.end(), pn.begin(), pn.end());
        }
        ++cluster;
    }

    ClusterOutcome out;
    out.assignments = std::move(label);
    out.k_found = static_cast<uint32_t>(cluster);
    return out;
}

double perfect_cluster_accuracy(const std::vector<int32_t>& assignments,
                                const std::vector<std::vector<size_t>>& true_groups) {
    if (true_groups.empty()) throw std::invalid_argument("perfect_cluster_accuracy: no groups");
    // Collect predicted clusters as sorted index sets (noise joins nothing).
    std::vector<std::vector<size_t>> clusters;
    {
        int32_t max_id = -1;
        for (int32_t a : assignments) max_id = std::max(max_id, a);
        clusters.resize(static_cast<size_t>(max_id + 1));
        for (size_t i = 0; i < assignments.size(); ++i)
            if (assignments[i] >= 0) clusters[assignments[i]].push_back(i);
    }
    size_t hits = 0;
    for (const auto& group : true_groups) {
        std::vector<size_t> want(group);
        std::sort(want.begin(), want.end());
        for (const auto& cl : clusters) {
            if (cl == want) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(true_groups.size());
}

void score_clusters(ClusterOutcome& outcome, const std::vector<std::vector<size_t>>& true_groups) {
    outcome.perfect_accuracy = perfect_cluster_accuracy(outcome.assignments, true_groups);
}

InversionOutcome unsplit_invert(const TensorF64& observed, const std::vector<uint32_t>& surrogate_widths,
                                nn::Activation hidden, nn::Activation last, const InversionOptions& opt,
                                const TensorF64* targets, uint32_t img_h, uint32_t img_w) {
    const uint32_t m = observed.rows();
    if (surrogate_widths.size() < 2) throw std::invalid_argument("unsplit_invert: bad surrogate widths");
    if (surrogate_widths.back() != observed.cols())
        throw std::invalid_argument("unsplit_invert: surrogate output width != observation width");

    InversionOutcome out;
    out.surrogate = opt.init_surrogate
                        ? *opt.init_surrogate
                        : nn::init_segment(surrogate_widths, hidden, last, mix_seed(opt.seed, 0x57u));
    out.surrogate.frozen = false;
    out.surrogate.reset_velocity();
    const uint32_t d = out.surrogate.input_dim();
    out.reconstructions = TensorF64::zeros({m, d});

    for (uint32_t it = 0; it < opt.iters; ++it) {
        auto [pred, trace] = nn::segment_forward(out.surrogate, out.reconstructions);
        TensorF64 diff = pred;
        double loss = 0.0;
        for (size_t i = 0; i < diff.values.size(); ++i) {
            diff.values[i] -= observed.values[i];
            loss += diff.values[i] * diff.values[i];
        }
        if (!std::isfinite(loss))
            throw std::runtime_error("unsplit_invert: diverged at iteration " + std::to_string(it));
        out.loss_curve.push_back(loss);

        for (double& v : diff.values) v *= 2.0; // d(sum of squares)
        auto [wgrads, xgrad] = nn::segment_backward(out.surrogate, trace, diff);
        for (size_t i = 0; i < out.reconstructions.values.size(); ++i)
            out.reconstructions.values[i] -= opt.lr_x * xgrad.values[i];
        if (opt.lr_w > 0.0) nn::sgd_step(out.surrogate, wgrads, opt.lr_w, 0.0);
    }

    if (targets) {
        if (!targets->same_shape(out.reconstructions))
            throw std::invalid_argument("unsplit_invert: target shape mismatch");
        double se = 0.0;
        for (size_t i = 0; i < targets->values.size(); ++i) {
            double diff = targets->values[i] - out.reconstructions.values[i];
            se += diff * diff;
        }
        out.mse = se / static_cast<double>(targets->values.size());
        if (img_h * img_w == d) {
            for (uint32_t r = 0; r < m; ++r) {
                TensorF64 a({img_h, img_w}, out.reconstructions.row(r));
                TensorF64 b({img_h, img_w}, targets->row(r));
                out.ssim_per_sample.push_back(ssim(a, b));
            }
            out.mean_ssim =
                std::accumulate(out.ssim_per_sample.begin(), out.ssim_per_sample.end(), 0.0) / m;
        }
    }
    return out;
}

double ssim(const TensorF64& a, const TensorF64& b) {
    if (a.shape.size() != 2 || !a.same_shape(b))
        throw std::invalid_argument("ssim: need two equal-shape 2-D tensors");
    const uint32_t h = a.rows();
    const uint32_t w = a.cols();
    const uint32_t win = 8;
    if (h < win || w < win) throw std::invalid_argument("ssim: images smaller than the 8x8 window");

    auto range = [](const TensorF64& t) {
        double lo = t.values[0], hi = t.values[0];
        for (double v : t.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        return hi - lo;
    };
    const double L = std::max({range(a), range(b), 1e-12});
    const double c1 = (0.01 * L) * (0.01 * L);
    const double c2 = (0.03 * L) * (0.03 * L);

    double total = 0.0;
    size_t windows = 0;
    const double inv_n = 1.0 / (win * win);
    for (uint32_t y = 0; y + win <= h; ++y) {
        for (uint32_t x = 0; x + win <= w; ++x) {
            double ma = 0.0, mb = 0.0;
            for (uint32_t i = 0; i < win; ++i)
                for (uint32_t j = 0; j < win; ++j) {
                    ma += a.at(y + i, x + j);
                    mb += b.at(y + i, x + j);
                }
            ma *= inv_n;
            mb *= inv_n;
            double va = 0.0, vb = 0.0, cov = 0.0;
            for (uint32_t i = 0; i < win; ++i)
                for (uint32_t j = 0; j < win; ++j) {
                    double da = a.at(y + i, x + j) - ma;
                    double db = b.at(y + i, x + j) - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            va *= inv_n;
            vb *= inv_n;
            cov *= inv_n;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++windows;
        }
    }
    return total / static_cast<double>(windows);
}

ExtractionOutcome extraction_attack(const PseudoApi& api, const TensorF64& probe_data, uint32_t q,
                                    uint32_t total_pseudo, const TensorF64& test_features,
                                    const std::vector<int32_t>& test_true_labels,
                                    const ExtractionOptions& opt) {
    if (q < 2) throw std::invalid_argument("extraction_attack: need q >= 2");
    if (opt.surrogate_widths.size() < 2 || opt.surrogate_widths.back() != q)
        throw std::invalid_argument("extraction_attack: surrogate must end in q outputs");

    ExtractionOutcome out;
    std::vector<int32_t> pseudo = api(probe_data);
    out.pseudo_label_queries = pseudo.size();

    // Without the secret mapping the attacker can only guess: each pseudo
    // group lands on a uniformly random true class.
    out.pseudo_to_true.resize(total_pseudo);
    if (opt.oracle_map) {
        for (uint32_t p = 0; p < total_pseudo; ++p)
            out.pseudo_to_true[p] = labels::demask(static_cast<int32_t>(p), *opt.oracle_map);
    } else {
        CounterRng rng(mix_seed(opt.seed, 0x4d617047756573ULL)); // "MapGues"
        for (uint32_t p = 0; p < total_pseudo; ++p)
            out.pseudo_to_true[p] = static_cast<int32_t>(rng.below(q));
    }

    std::vector<int32_t> train_labels;
    train_labels.reserve(pseudo.size());
    for (int32_t p : pseudo) {
        if (p < 0 || static_cast<uint32_t>(p) >= total_pseudo)
            throw std::out_of_range("extraction_attack: api returned pseudo id outside the space");
        train_labels.push_back(out.pseudo_to_true[p]);
    }

    out.surrogate = nn::init_segment(opt.surrogate_widths, nn::Activation::Relu, nn::Activation::Identity,
                                     mix_seed(opt.seed, 0x537572720000ULL)); // "Surr"
    const size_t n = probe_data.rows();
    for (uint32_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        std::vector<size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        CounterRng rng(mix_seed(opt.seed, 0x45700000ULL + epoch));
        for (size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        for (size_t lo = 0; lo < n; lo += opt.batch_size) {
            size_t hi = std::min(n, lo + opt.batch_size);
            std::vector<size_t> rows(perm.begin() + lo, perm.begin() + hi);
            TensorF64 xb = probe_data.gather_rows(rows);
            std::vector<int32_t> yb;
            yb.reserve(rows.size());
            for (size_t r : rows) yb.push_back(train_labels[r]);
            auto [logits, trace] = nn::segment_forward(out.surrogate, xb);
            nn::XentResult xent = nn::softmax_xent(logits, yb);
            auto [grads, gin] = nn::segment_backward(out.surrogate, trace, xent.grad);
            (void)gin;
            nn::sgd_step(out.surrogate, grads, opt.lr, opt.momentum);
        }
    }

    TensorF64 logits = nn::segment_infer(out.surrogate, test_features);
    size_t hits = 0;
    for (uint32_t r = 0; r < logits.rows(); ++r) {
        const double* row = &logits.values[static_cast<size_t>(r) * logits.cols()];
        int32_t best = 0;
        for (uint32_t c = 1; c < logits.cols(); ++c)
            if (row[c] > row[best]) best = static_cast<int32_t>(c);
        if (best == test_true_labels[r]) ++hits;
    }
    out.surrogate_true_accuracy = static_cast<double>(hits) / logits.rows();
    return out;
}

} // namespace clicooper::attacks
