#pragma once

#include <cstddef>
#include <span>

#include <json.hpp>

namespace ebrm {

struct MetricsReport {
    double accuracy = 0.0;
    double pos_acc = 0.0;  // recall of the relevant class
    double neg_acc = 0.0;  // recall of the irrelevant class
    double macro_f1 = 0.0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }
};

/// Binary relevance metrics. F1 of a class with no support and no
/// predictions (0/0) counts as 0. Throws ValidationError on length
/// mismatch, empty input, or labels outside {0,1}.
MetricsReport evaluate(std::span<const int> predictions, std::span<const int> golds);

nlohmann::json to_json(const MetricsReport& m);

}  // namespace ebrm
