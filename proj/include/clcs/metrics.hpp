#pragma once

// Per-class Dice and IoU against clean labels.

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "clcs/model.hpp"

namespace clcs {

/// Confusion counts per class, mergeable across batches.
struct OverlapCounts {
  std::vector<std::uint64_t> intersection;
  std::vector<std::uint64_t> predicted;
  std::vector<std::uint64_t> truth;

  explicit OverlapCounts(std::size_t classes = 0)
      : intersection(classes, 0), predicted(classes, 0), truth(classes, 0) {}

  std::size_t classes() const { return intersection.size(); }
  void add(std::span<const Label> pred, std::span<const Label> truth_labels);
  void merge(const OverlapCounts& other);
};

struct SegmentationScores {
  std::vector<double> dice;
  std::vector<double> iou;
  double mean_dice = 0.0;  // foreground classes only
  double mean_iou = 0.0;
};

/// A class absent from both prediction and truth scores 1.0.
SegmentationScores scores_from_counts(const OverlapCounts& counts);

SegmentationScores per_class_scores(std::span<const Label> pred, std::span<const Label> truth,
                                    std::size_t classes);

/// "class,dice,iou" header plus one row per class.
void write_scores_csv(std::ostream& os, const SegmentationScores& s,
                      std::span<const std::string> class_names);

}  // namespace clcs
