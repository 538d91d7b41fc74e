#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "lf/errors.hpp"
#include "lf/tensor.hpp"

namespace lf {

/// Axis-aligned box in image pixel coordinates, optionally scored.
struct BBox {
  float x1 = 0.f, y1 = 0.f, x2 = 0.f, y2 = 0.f;
  std::optional<float> score;

  float width() const { return x2 - x1; }
  float height() const { return y2 - y1; }
  float area() const { return width() * height(); }
  float cx() const { return 0.5f * (x1 + x2); }
  float cy() const { return 0.5f * (y1 + y2); }

  BBox clipped(float img_w, float img_h) const {
    BBox b = *this;
    b.x1 = std::clamp(b.x1, 0.f, img_w);
    b.y1 = std::clamp(b.y1, 0.f, img_h);
    b.x2 = std::clamp(b.x2, 0.f, img_w);
    b.y2 = std::clamp(b.y2, 0.f, img_h);
    return b;
  }
};

/// Intersection over union; 0 for disjoint boxes, 1 for identical ones.
inline float iou(const BBox& a, const BBox& b) {
  const float ix1 = std::max(a.x1, b.x1);
  const float iy1 = std::max(a.y1, b.y1);
  const float ix2 = std::min(a.x2, b.x2);
  const float iy2 = std::min(a.y2, b.y2);
  const float iw = std::max(0.f, ix2 - ix1);
  const float ih = std::max(0.f, iy2 - iy1);
  const double inter = static_cast<double>(iw) * ih;
  const double uni = static_cast<double>(a.area()) + b.area() - inter;
  return uni <= 0.0 ? 0.f : static_cast<float>(inter / uni);
}

/// Greedy non-maximum suppression by descending score, stable on ties by
/// input index. A box is kept iff its IoU with every kept box is <= threshold.
inline std::vector<BBox> nms(const std::vector<BBox>& boxes, float iou_threshold = 0.5f) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return boxes[a].score.value() > boxes[b].score.value();
  });
  std::vector<BBox> kept;
  for (const std::size_t idx : order) {
    bool suppressed = false;
    for (const BBox& k : kept) {
      if (iou(boxes[idx], k) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(boxes[idx]);
  }
  return kept;
}

/// Anchor grid specification. Anchors per location = |base_sizes| x |ratios|.
struct AnchorConfig {
  std::vector<float> base_sizes = {32.f, 64.f, 128.f};
  std::vector<float> aspect_ratios = {0.5f, 1.f, 2.f};
  int stride = 16;

  int anchors_per_location() const {
    return static_cast<int>(base_sizes.size() * aspect_ratios.size());
  }
};

/// Anchors centered at ((j+0.5)*stride, (i+0.5)*stride), row-major per
/// location with (size, ratio) combinations varying fastest. A ratio-r anchor
/// of base s has area s^2 and height/width = r.
inline std::vector<BBox> generate_anchors(int feature_h, int feature_w,
                                          const AnchorConfig& config) {
  std::vector<BBox> anchors;
  anchors.reserve(static_cast<std::size_t>(feature_h) * feature_w *
                  config.anchors_per_location());
  for (int i = 0; i < feature_h; ++i) {
    for (int j = 0; j < feature_w; ++j) {
      const float cx = (static_cast<float>(j) + 0.5f) * static_cast<float>(config.stride);
      const float cy = (static_cast<float>(i) + 0.5f) * static_cast<float>(config.stride);
      for (const float s : config.base_sizes) {
        for (const float r : config.aspect_ratios) {
          const float w = s / std::sqrt(r);
          const float h = s * std::sqrt(r);
          anchors.push_back({cx - 0.5f * w, cy - 0.5f * h, cx + 0.5f * w, cy + 0.5f * h,
                             std::nullopt});
        }
      }
    }
  }
  return anchors;
}

/// Center/log-size box parameterization relative to an anchor.
struct BoxDelta {
  float tx = 0.f, ty = 0.f, tw = 0.f, th = 0.f;
};

inline BoxDelta encode_box(const BBox& gt, const BBox& anchor) {
  if (gt.width() <= 0.f || gt.height() <= 0.f) {
    throw DegenerateBoxError("encode_box: degenerate ground-truth box of size " +
                             std::to_string(gt.width()) + "x" + std::to_string(gt.height()));
  }
  BoxDelta d;
  d.tx = (gt.cx() - anchor.cx()) / anchor.width();
  d.ty = (gt.cy() - anchor.cy()) / anchor.height();
  d.tw = std::log(gt.width() / anchor.width());
  d.th = std::log(gt.height() / anchor.height());
  return d;
}

inline BBox decode_box(const BoxDelta& d, const BBox& anchor) {
  const float cx = anchor.cx() + d.tx * anchor.width();
  const float cy = anchor.cy() + d.ty * anchor.height();
  const float w = anchor.width() * std::exp(d.tw);
  const float h = anchor.height() * std::exp(d.th);
  return {cx - 0.5f * w, cy - 0.5f * h, cx + 0.5f * w, cy + 0.5f * h, std::nullopt};
}

enum class AnchorLabel : std::int8_t { kNegative = 0, kPositive = 1, kIgnore = -1 };

struct AnchorAssignment {
  std::vector<AnchorLabel> labels;
  std::vector<int> matched_gt;  // valid where label is positive
};

/// RPN training labels: positive if IoU >= pos_iou with any gt or the anchor
/// is argmax for some gt (ties included); negative if max IoU < neg_iou;
/// ignore otherwise.
inline AnchorAssignment assign_anchors(const std::vector<BBox>& anchors,
                                       const std::vector<BBox>& gt_boxes, float pos_iou = 0.7f,
                                       float neg_iou = 0.3f) {
  if (gt_boxes.empty()) throw ContractError("assign_anchors: need at least one ground-truth box");
  const std::size_t n = anchors.size();
  AnchorAssignment out;
  out.labels.assign(n, AnchorLabel::kIgnore);
  out.matched_gt.assign(n, -1);

  std::vector<float> best_iou(n, 0.f);
  std::vector<int> best_gt(n, -1);
  std::vector<float> gt_best(gt_boxes.size(), 0.f);
  std::vector<std::vector<float>> table(gt_boxes.size());
  for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
    table[g].resize(n);
    for (std::size_t a = 0; a < n; ++a) {
      const float v = iou(anchors[a], gt_boxes[g]);
      table[g][a] = v;
      if (v > best_iou[a]) {
        best_iou[a] = v;
        best_gt[a] = static_cast<int>(g);
      }
      gt_best[g] = std::max(gt_best[g], v);
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (best_iou[a] >= pos_iou) {
      out.labels[a] = AnchorLabel::kPositive;
    } else if (best_iou[a] < neg_iou) {
      out.labels[a] = AnchorLabel::kNegative;
    }
  }
  // Argmax fallback: every gt keeps at least one positive anchor (ties included).
  for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
    if (gt_best[g] <= 0.f) continue;
    for (std::size_t a = 0; a < n; ++a) {
      if (table[g][a] >= gt_best[g] - 1e-9f) out.labels[a] = AnchorLabel::kPositive;
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (out.labels[a] == AnchorLabel::kPositive) out.matched_gt[a] = best_gt[a];
  }
  return out;
}

/// Tight box around nonzero pixels of a [H,W] (or [1,H,W]) mask, expanded by
/// margin_fraction of each side, clipped to the image. All-zero mask -> whole
/// image. Pixel (row r, col c) occupies [c, c+1) x [r, r+1).
template <typename T>
BBox mask_to_bbox(const BasicTensor<T>& mask, float margin_fraction = 0.05f) {
  int h = 0, w = 0;
  if (mask.rank() == 2) {
    h = mask.dim(0);
    w = mask.dim(1);
  } else if (mask.rank() == 3 && mask.dim(0) == 1) {
    h = mask.dim(1);
    w = mask.dim(2);
  } else {
    throw DimensionError("mask_to_bbox: expected [H,W] or [1,H,W], got " + shape_str(mask.shape()));
  }
  int min_r = h, max_r = -1, min_c = w, max_c = -1;
  const T* p = mask.data().data();
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (p[static_cast<std::int64_t>(r) * w + c] > T(0.5)) {
        min_r = std::min(min_r, r);
        max_r = std::max(max_r, r);
        min_c = std::min(min_c, c);
        max_c = std::max(max_c, c);
      }
    }
  }
  if (max_r < 0) return {0.f, 0.f, static_cast<float>(w), static_cast<float>(h), std::nullopt};
  BBox b{static_cast<float>(min_c), static_cast<float>(min_r), static_cast<float>(max_c + 1),
         static_cast<float>(max_r + 1), std::nullopt};
  const float mx = margin_fraction * b.width();
  const float my = margin_fraction * b.height();
  b.x1 -= mx;
  b.x2 += mx;
  b.y1 -= my;
  b.y2 += my;
  return b.clipped(static_cast<float>(w), static_cast<float>(h));
}

}  // namespace lf
