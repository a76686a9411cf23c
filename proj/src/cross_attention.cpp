#include "msdiff/cross_attention.hpp"

#include <algorithm>

#include "msdiff/error.hpp"
#include "msdiff/nn.hpp"

namespace msd {

bool cell_in_box(const BoxNorm& box, std::size_t x, std::size_t y, std::size_t latent_h, std::size_t latent_w) {
    const double cx = (static_cast<double>(x) + 0.5) / static_cast<double>(latent_w);
    const double cy = (static_cast<double>(y) + 0.5) / static_cast<double>(latent_h);
    return box.contains(cx, cy);
}

SubjectKeyMask build_subject_mask(const BoxNorm& box, std::size_t latent_h, std::size_t latent_w, std::size_t n_t) {
    if (latent_h == 0 || latent_w == 0 || n_t == 0) throw ContractError("build_subject_mask: dimensions must be >= 1");
    SubjectKeyMask m;
    m.box = box;
    m.latent_h = latent_h;
    m.latent_w = latent_w;
    m.grid = AdditiveMask{latent_h * latent_w, n_t, std::vector<std::uint8_t>(latent_h * latent_w * n_t, 1)};
    for (std::size_t y = 0; y < latent_h; ++y)
        for (std::size_t x = 0; x < latent_w; ++x) {
            if (!cell_in_box(box, x, y, latent_h, latent_w)) continue;
            for (std::size_t k = 0; k < n_t; ++k) m.grid.blocked[(y * latent_w + x) * n_t + k] = 0;
        }
    return m;
}

AssembledMask assemble_masks(const std::vector<BoxNorm>& boxes, std::size_t latent_h, std::size_t latent_w,
                             std::size_t n_t, std::size_t dummy_count) {
    if (boxes.empty()) throw ContractError("assemble_masks: at least one box is required");
    if (boxes.size() > max_subjects) throw ContractError("assemble_masks: more than 4 boxes");
    const std::size_t cells = latent_h * latent_w;
    const std::size_t keys = dummy_count + boxes.size() * n_t;
    AssembledMask out;
    out.dummy_count = dummy_count;
    out.latent_h = latent_h;
    out.latent_w = latent_w;
    out.key_mask = AdditiveMask{cells, keys, std::vector<std::uint8_t>(cells * keys, 0)};
    out.bg_mask.assign(cells, 1.0);
    for (std::size_t j = 0; j < boxes.size(); ++j) {
        const auto mj = build_subject_mask(boxes[j], latent_h, latent_w, n_t);
        for (std::size_t cell = 0; cell < cells; ++cell) {
            const bool blocked = mj.grid.blocked[cell * n_t] != 0;
            if (!blocked) out.bg_mask[cell] = 0.0;
            for (std::size_t k = 0; k < n_t; ++k) {
                out.key_mask.blocked[cell * keys + dummy_count + j * n_t + k] = mj.grid.blocked[cell * n_t + k];
            }
        }
    }
    return out;
}

DualAttentionOutput dual_cross_attention(const Tensor& z, const Tensor& c_t, const ImageCondition* image,
                                         const Tensor& dummy_tokens, const AssembledMask* masks, double gamma,
                                         const DualAttentionWeights& w) {
    DualAttentionOutput out;
    Tensor q = matmul(z, w.wq);
    auto text = nn::multi_head_attention(q, matmul(c_t, w.wk_t), matmul(c_t, w.wv_t), w.heads);
    out.z_txt = text.out;
    out.attn_text = text.weights;
    out.z_out = add(z, out.z_txt);
    if (!image || gamma == 0.0) return out;

    Tensor keys_in = image->tokens;
    const std::size_t dummy_count = dummy_tokens.defined() ? dummy_tokens.rows() : 0;
    if (dummy_count) keys_in = concat_rows({dummy_tokens, image->tokens});
    if (masks) {
        if (masks->key_mask.rows != z.rows() || masks->key_mask.cols != keys_in.rows() ||
            masks->dummy_count != dummy_count) {
            throw ShapeError("dual_cross_attention: mask " + std::to_string(masks->key_mask.rows) + "x" +
                             std::to_string(masks->key_mask.cols) + " does not match " + std::to_string(z.rows()) +
                             " queries x " + std::to_string(keys_in.rows()) + " keys");
        }
    }
    auto img = nn::multi_head_attention(q, matmul(keys_in, w.wk_i), matmul(keys_in, w.wv_i), w.heads,
                                        masks ? &masks->key_mask : nullptr, &out.image_stats);
    out.attn_image = img.weights;
    if (masks) {
        std::vector<double> keep(masks->bg_mask.size());
        for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = 1.0 - masks->bg_mask[i];
        out.z_img = mul_rows(img.out, keep);
    } else {
        out.z_img = img.out;
    }
    out.z_out = add(out.z_out, scale(out.z_img, gamma));
    return out;
}

AttentionLoss attention_map_loss(const std::vector<AttentionMap>& maps, const std::vector<BoxNorm>& boxes,
                                 const std::vector<std::vector<std::size_t>>& subject_tokens) {
    if (boxes.size() != subject_tokens.size()) {
        throw ContractError("attention_map_loss: " + std::to_string(boxes.size()) + " boxes for " +
                            std::to_string(subject_tokens.size()) + " token sets");
    }
    if (maps.empty() || boxes.empty()) throw ContractError("attention_map_loss: nothing to average");
    AttentionLoss result;
    std::vector<Tensor> terms;
    for (std::size_t m = 0; m < maps.size(); ++m) {
        const auto& map = maps[m];
        const std::size_t cells = map.latent_h * map.latent_w;
        if (map.weights.rows() != cells) {
            throw ShapeError("attention_map_loss: map " + shape_str(map.weights.shape()) + " does not have " +
                             std::to_string(cells) + " rows");
        }
        const std::size_t cols = map.weights.cols();
        for (std::size_t j = 0; j < boxes.size(); ++j) {
            std::vector<double> w_in(cells * cols, 0.0), w_all(cells * cols, 0.0);
            for (std::size_t k : subject_tokens[j]) {
                if (k >= cols) throw ContractError("attention_map_loss: token index " + std::to_string(k) + " out of range");
            }
            for (std::size_t y = 0; y < map.latent_h; ++y)
                for (std::size_t x = 0; x < map.latent_w; ++x) {
                    const std::size_t cell = y * map.latent_w + x;
                    const bool inside = cell_in_box(boxes[j], x, y, map.latent_h, map.latent_w);
                    for (std::size_t k : subject_tokens[j]) {
                        w_all[cell * cols + k] = 1.0;
                        if (inside) w_in[cell * cols + k] = 1.0;
                    }
                }
            Tensor total = weighted_sum(map.weights, w_all);
            if (total.item() <= 0.0) {
                result.zero_mass.emplace_back(m, j);
                terms.push_back(Tensor::scalar(1.0));
                continue;
            }
            Tensor ratio = div(weighted_sum(map.weights, w_in), total);
            terms.push_back(square(add_scalar(scale(ratio, -1.0), 1.0)));
        }
    }
    result.value = average(terms);
    return result;
}

Tensor attribution_heatmap(const Tensor& attention, const std::vector<std::size_t>& token_indices,
                           std::size_t latent_h, std::size_t latent_w) {
    if (token_indices.empty()) throw ContractError("attribution_heatmap: empty token index set");
    const std::size_t cells = latent_h * latent_w;
    if (attention.rows() != cells) {
        throw ShapeError("attribution_heatmap: attention " + shape_str(attention.shape()) + " does not have " +
                         std::to_string(cells) + " rows");
    }
    const std::size_t cols = attention.cols();
    auto a = attention.data();
    std::vector<double> heat(cells, 0.0);
    for (std::size_t k : token_indices) {
        if (k >= cols) throw ContractError("attribution_heatmap: token index " + std::to_string(k) + " out of range");
    }
    for (std::size_t cell = 0; cell < cells; ++cell) {
        double s = 0.0;
        for (std::size_t k : token_indices) s += a[cell * cols + k];
        heat[cell] = s / static_cast<double>(token_indices.size());
    }
    const auto [lo_it, hi_it] = std::minmax_element(heat.begin(), heat.end());
    const double lo = *lo_it, hi = *hi_it;
    for (auto& v : heat) v = (hi > lo) ? (v - lo) / (hi - lo) : 0.0;
    return Tensor::from({latent_h, latent_w}, std::move(heat));
}

}  // namespace msd
