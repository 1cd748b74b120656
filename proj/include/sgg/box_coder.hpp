#ifndef SGG_BOX_CODER_HPP
#define SGG_BOX_CODER_HPP

#include "sgg/error.hpp"
#include "sgg/graph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

namespace sgg
{

/// Offsets (dx, dy, dw, dh) of a box relative to a proposal, in the
/// center/size parameterization used by region-based detectors.
using box_offsets = std::array<double, 4>;

struct image_bounds
{
    double width = 0.0;
    double height = 0.0;
};

inline box_offsets encode_offsets(const box& proposal, const box& gt)
{
    const double pw = proposal.width();
    const double ph = proposal.height();
    if (!(pw > 0.0 && ph > 0.0)) throw geometry_error("encode_offsets: degenerate proposal");
    if (!(gt.width() > 0.0 && gt.height() > 0.0)) {
        throw geometry_error("encode_offsets: degenerate target box");
    }
    return {(gt.center_x() - proposal.center_x()) / pw, (gt.center_y() - proposal.center_y()) / ph,
            std::log(gt.width() / pw), std::log(gt.height() / ph)};
}

/// Inverse of encode_offsets. With bounds, the result is clipped to the image.
inline box decode_offsets(const box& proposal, const box_offsets& t,
                          std::optional<image_bounds> bounds = std::nullopt)
{
    const double pw = proposal.width();
    const double ph = proposal.height();
    if (!(pw > 0.0 && ph > 0.0)) throw geometry_error("decode_offsets: degenerate proposal");
    const double cx = proposal.center_x() + t[0] * pw;
    const double cy = proposal.center_y() + t[1] * ph;
    const double w = pw * std::exp(t[2]);
    const double h = ph * std::exp(t[3]);
    box b{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
    if (!(std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) && std::isfinite(b.y2))) {
        throw geometry_error("decode_offsets: non-finite box");
    }
    if (bounds) {
        b.x1 = std::clamp(b.x1, 0.0, bounds->width);
        b.x2 = std::clamp(b.x2, 0.0, bounds->width);
        b.y1 = std::clamp(b.y1, 0.0, bounds->height);
        b.y2 = std::clamp(b.y2, 0.0, bounds->height);
    }
    return b;
}

/// Ground-truth box of node i, recovered from its proposal and offsets.
inline box gt_box(const scene_graph_sample& s, std::size_t i)
{
    return decode_offsets(s.proposals[i], s.gt_offsets[i]);
}

} // namespace sgg
#endif // header guard
