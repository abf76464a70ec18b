#include "ebrm/metrics.hpp"

#include "ebrm/core.hpp"

namespace ebrm {

namespace {

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double f1(std::size_t tp, std::size_t fp, std::size_t fn) {
    return ratio(2 * tp, 2 * tp + fp + fn);
}

}  // namespace

MetricsReport evaluate(std::span<const int> predictions, std::span<const int> golds) {
    if (predictions.size() != golds.size()) {
        throw ValidationError("prediction count " + std::to_string(predictions.size()) +
                              " != gold count " + std::to_string(golds.size()));
    }
    if (golds.empty()) throw ValidationError("cannot evaluate an empty prediction list");
    MetricsReport m;
    for (std::size_t i = 0; i < golds.size(); ++i) {
        const int p = predictions[i], g = golds[i];
        if ((p != 0 && p != 1) || (g != 0 && g != 1)) {
            throw ValidationError("labels must be 0 or 1 (index " + std::to_string(i) + ")");
        }
        if (p == 1 && g == 1) ++m.tp;
        else if (p == 1) ++m.fp;
        else if (g == 0) ++m.tn;
        else ++m.fn;
    }
    m.accuracy = ratio(m.tp + m.tn, m.total());
    m.pos_acc = ratio(m.tp, m.tp + m.fn);
    m.neg_acc = ratio(m.tn, m.tn + m.fp);
    // The negative class's F1 swaps the roles of the confusion cells.
    m.macro_f1 = 0.5 * (f1(m.tp, m.fp, m.fn) + f1(m.tn, m.fn, m.fp));
    return m;
}

nlohmann::json to_json(const MetricsReport& m) {
    return {{"accuracy", m.accuracy}, {"pos_acc", m.pos_acc},  {"neg_acc", m.neg_acc},
            {"macro_f1", m.macro_f1}, {"tp", m.tp},            {"fp", m.fp},
            {"tn", m.tn},             {"fn", m.fn}};
}

}  // namespace ebrm
