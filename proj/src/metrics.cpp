#include "clcs/metrics.hpp"

#include <stdexcept>
#include <string>

#include "clcs/io.hpp"

namespace clcs {

void OverlapCounts::add(std::span<const Label> pred, std::span<const Label> truth_labels) {
  if (pred.size() != truth_labels.size()) {
    throw std::invalid_argument("metrics: prediction has " + std::to_string(pred.size()) +
                                " pixels, truth has " + std::to_string(truth_labels.size()));
  }
  const std::size_t c = classes();
  for (std::size_t j = 0; j < pred.size(); ++j) {
    if (pred[j] >= c || truth_labels[j] >= c) throw std::out_of_range("metrics: class index out of range");
    ++predicted[pred[j]];
    ++truth[truth_labels[j]];
    if (pred[j] == truth_labels[j]) ++intersection[pred[j]];
  }
}

void OverlapCounts::merge(const OverlapCounts& other) {
  if (other.classes() != classes()) throw std::invalid_argument("metrics: class count mismatch");
  for (std::size_t c = 0; c < classes(); ++c) {
    intersection[c] += other.intersection[c];
    predicted[c] += other.predicted[c];
    truth[c] += other.truth[c];
  }
}

SegmentationScores scores_from_counts(const OverlapCounts& counts) {
  const std::size_t n = counts.classes();
  SegmentationScores s;
  s.dice.resize(n);
  s.iou.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    const double inter = static_cast<double>(counts.intersection[c]);
    const double sum = static_cast<double>(counts.predicted[c] + counts.truth[c]);
    if (sum == 0.0) {
      s.dice[c] = s.iou[c] = 1.0;
      continue;
    }
    s.dice[c] = 2.0 * inter / sum;
    s.iou[c] = inter / (sum - inter);
  }
  if (n > 1) {
    for (std::size_t c = 1; c < n; ++c) {
      s.mean_dice += s.dice[c];
      s.mean_iou += s.iou[c];
    }
    s.mean_dice /= static_cast<double>(n - 1);
    s.mean_iou /= static_cast<double>(n - 1);
  }
  return s;
}

SegmentationScores per_class_scores(std::span<const Label> pred, std::span<const Label> truth,
                                    std::size_t classes) {
  OverlapCounts counts(classes);
  counts.add(pred, truth);
  return scores_from_counts(counts);
}

void write_scores_csv(std::ostream& os, const SegmentationScores& s,
                      std::span<const std::string> class_names) {
  os << "class,dice,iou\n";
  for (std::size_t c = 0; c < s.dice.size(); ++c) {
    const std::string name = c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
    os << name << ',' << format_real(s.dice[c]) << ',' << format_real(s.iou[c]) << '\n';
  }
}

}  // namespace clcs
