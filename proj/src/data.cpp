#include "tlab/data.hpp"

#include "tlab/error.hpp"

namespace tlab {

Tensor Dataset::gather(const std::vector<int>& indices) const {
    if (images.rank() != 4) throw ShapeError("dataset images must be (N,C,H,W)");
    const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
    const std::size_t per = (std::size_t)c * h * w;
    Tensor out({(int)indices.size(), c, h, w});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int idx = indices[i];
        if (idx < 0 || idx >= count()) throw DataError("sample index out of range");
        std::copy(images.ptr() + (std::size_t)idx * per, images.ptr() + (std::size_t)(idx + 1) * per,
                  out.ptr() + i * per);
    }
    return out;
}

std::vector<int> Dataset::gather_labels(const std::vector<int>& indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (int idx : indices) out.push_back(labels.at(idx));
    return out;
}

} // namespace tlab
