#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace fallnet {

// Fall (label 1) is the positive class: tp counts falls classified as falls.
struct ConfusionCounts {
    size_t tp = 0, fp = 0, fn = 0, tn = 0;

    size_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o);
};

ConfusionCounts confusion(const std::vector<size_t>& predicted,
                          const std::vector<size_t>& actual);

// accuracy = (tp+tn)/total, recall = tp/(tp+fn), precision = tp/(tp+fp),
// f_score = 2*r*p/(r+p). Any 0/0 yields 0 with `degenerate` set.
struct MetricSet {
    double accuracy = 0;
    double recall = 0;
    double precision = 0;
    double f_score = 0;
    bool degenerate = false;
};

MetricSet compute_metrics(const ConfusionCounts& c);

// Fractions as percentages rounded to two decimals, half away from zero.
double percent2(double fraction);

} // namespace fallnet
