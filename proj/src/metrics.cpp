#include "fallnet/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace fallnet {

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
}

ConfusionCounts confusion(const std::vector<size_t>& predicted,
                          const std::vector<size_t>& actual) {
    if (predicted.size() != actual.size()) {
        throw std::invalid_argument("confusion: " + std::to_string(predicted.size()) +
                                    " predictions vs " + std::to_string(actual.size()) +
                                    " labels");
    }
    ConfusionCounts c;
    for (size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] > 1 || actual[i] > 1) {
            throw std::invalid_argument("confusion: labels must be 0 or 1 (index " +
                                        std::to_string(i) + ")");
        }
        if (actual[i] == 1) {
            (predicted[i] == 1 ? c.tp : c.fn) += 1;
        } else {
            (predicted[i] == 1 ? c.fp : c.tn) += 1;
        }
    }
    return c;
}

namespace {

// ratio with the 0/0 -> 0 convention; flags when that convention fired.
double safe_ratio(double num, double den, bool& degenerate) {
    if (den == 0) {
        degenerate = true;
        return 0;
    }
    return num / den;
}

} // namespace

MetricSet compute_metrics(const ConfusionCounts& c) {
    MetricSet m;
    auto tp = static_cast<double>(c.tp);
    auto fp = static_cast<double>(c.fp);
    auto fn = static_cast<double>(c.fn);
    auto tn = static_cast<double>(c.tn);
    m.accuracy = safe_ratio(tp + tn, tp + fp + fn + tn, m.degenerate);
    m.recall = safe_ratio(tp, tp + fn, m.degenerate);
    m.precision = safe_ratio(tp, tp + fp, m.degenerate);
    m.f_score = safe_ratio(2 * m.recall * m.precision, m.recall + m.precision, m.degenerate);
    return m;
}

double percent2(double fraction) {
    return std::round(fraction * 10000.0) / 100.0;
}

} // namespace fallnet
