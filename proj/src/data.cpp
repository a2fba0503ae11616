// SPDX-License-Identifier: Apache-2.0

#include "fedpeft/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fedpeft {

PartitionAssignment dirichlet_partition(const std::vector<int>& labels, int num_clients,
                                        double alpha, std::uint64_t seed) {
    if (num_clients < 1) throw InputError("dirichlet_partition: need at least one client");
    if (!(alpha > 0)) throw InputError("dirichlet_partition: alpha must be positive");

    PartitionAssignment part;
    part.owner.assign(labels.size(), 0);
    part.num_clients = num_clients;
    part.alpha = alpha;
    part.seed = seed;
    if (labels.empty()) return part;

    const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
    Rng rng = Rng::stream(seed, 0x9a27u);

    for (int c = 0; c < classes; ++c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == c) idx.push_back(i);
        if (idx.empty()) continue;
        rng.shuffle(idx);

        const std::vector<double> p = rng.dirichlet(alpha, static_cast<std::size_t>(num_clients));

        // largest-remainder rounding: floor everything, then hand the
        // leftover samples to the largest fractional parts (ties by lower id)
        const auto total = static_cast<double>(idx.size());
        std::vector<std::size_t> counts(num_clients);
        std::vector<std::pair<double, int>> rema(num_clients);
        std::size_t assigned = 0;
        for (int n = 0; n < num_clients; ++n) {
            const double exact = p[n] * total;
            counts[n] = static_cast<std::size_t>(std::floor(exact));
            assigned += counts[n];
            rema[n] = {exact - std::floor(exact), n};
        }
        std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (std::size_t r = 0; assigned < idx.size(); ++r, ++assigned) counts[rema[r].second]++;

        std::size_t off = 0;
        for (int n = 0; n < num_clients; ++n)
            for (std::size_t k = 0; k < counts[n]; ++k) part.owner[idx[off++]] = n;
    }
    return part;
}

namespace {

void generate_blobs(const SyntheticTaskSpec& spec, std::uint64_t seed, Dataset& out) {
    const int D = spec.feature_dim;
    // two prototype frames from the task seed; shift rotates between them
    Rng task_rng = Rng::stream(spec.task_seed, 0xb10b5u);
    std::vector<double> base(static_cast<std::size_t>(spec.class_count) * D);
    std::vector<double> alt(base.size());
    for (auto& v : base) v = task_rng.normal();
    for (auto& v : alt) v = task_rng.normal();
    auto unit_scale = [&](std::vector<double>& proto) {
        for (int c = 0; c < spec.class_count; ++c) {
            double norm = 0;
            for (int j = 0; j < D; ++j) norm += proto[c * D + j] * proto[c * D + j];
            norm = std::sqrt(norm);
            for (int j = 0; j < D; ++j) proto[c * D + j] *= spec.separation / (norm > 0 ? norm : 1.0);
        }
    };
    unit_scale(base);
    unit_scale(alt);
    const double a = spec.shift * M_PI / 2.0;
    std::vector<double> proto(base.size());
    for (std::size_t i = 0; i < proto.size(); ++i)
        proto[i] = std::cos(a) * base[i] + std::sin(a) * alt[i];

    Rng rng = Rng::stream(seed, 0x5a3fu);
    out.feature_shape = {static_cast<std::size_t>(D)};
    for (int c = 0; c < spec.class_count; ++c)
        for (int s = 0; s < spec.samples_per_class; ++s) {
            for (int j = 0; j < D; ++j)
                out.features.push_back(
                    static_cast<float>(proto[c * D + j] + spec.noise * rng.normal()));
            out.labels.push_back(c);
        }
}

void generate_textures(const SyntheticTaskSpec& spec, std::uint64_t seed, Dataset& out) {
    const int img = spec.image_size;
    Rng task_rng = Rng::stream(spec.task_seed, 0x7e47u);

    struct ClassPattern {
        double orient, freq;
        double tint[3];
    };
    std::vector<ClassPattern> classes(spec.class_count);
    for (int c = 0; c < spec.class_count; ++c) {
        auto& cp = classes[c];
        cp.orient = M_PI * c / spec.class_count + task_rng.uniform(-0.05, 0.05);
        cp.freq = 1.5 + (c % 4) + task_rng.uniform(-0.1, 0.1);
        for (int ch = 0; ch < 3; ++ch) cp.tint[ch] = 0.4 + 0.6 * task_rng.uniform();
    }
    // domain shift: rotate every grating and mix the color channels
    const double rot = spec.shift * M_PI / 8.0;
    const double mix = spec.shift * 0.5;

    Rng rng = Rng::stream(seed, 0x7e47u + 1);
    out.feature_shape = {3, static_cast<std::size_t>(img), static_cast<std::size_t>(img)};
    for (int c = 0; c < spec.class_count; ++c) {
        const auto& cp = classes[c];
        const double th = cp.orient + rot;
        const double co = std::cos(th), si = std::sin(th);
        double tint[3];
        for (int ch = 0; ch < 3; ++ch)
            tint[ch] = (1.0 - mix) * cp.tint[ch] + mix * cp.tint[(ch + 1) % 3];
        for (int s = 0; s < spec.samples_per_class; ++s) {
            const double phase = rng.uniform(0, 2 * M_PI);
            for (int ch = 0; ch < 3; ++ch)
                for (int y = 0; y < img; ++y)
                    for (int x = 0; x < img; ++x) {
                        const double u = (x * co + y * si) / img;
                        const double wave = std::sin(2 * M_PI * cp.freq * u + phase);
                        const double v =
                            0.5 + 0.4 * wave * tint[ch] + spec.noise * rng.normal();
                        out.features.push_back(static_cast<float>(v));
                    }
            out.labels.push_back(c);
        }
    }
}

}  // namespace

Dataset make_synthetic(const SyntheticTaskSpec& spec, std::uint64_t seed) {
    spec.validate();
    Dataset out;
    out.class_count = spec.class_count;
    if (spec.family == Family::mlp)
        generate_blobs(spec, seed, out);
    else
        generate_textures(spec, seed, out);
    return out;
}

namespace {

std::uint32_t read_be32(std::ifstream& f, const std::string& path, std::size_t offset) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4))
        throw ParseError(path + ": truncated header at byte " + std::to_string(offset));
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream fi(images_path, std::ios::binary);
    if (!fi) throw ParseError(images_path + ": cannot open");
    if (read_be32(fi, images_path, 0) != 0x00000803u)
        throw ParseError(images_path + ": bad image magic at byte 0");
    const std::uint32_t n = read_be32(fi, images_path, 4);
    const std::uint32_t rows = read_be32(fi, images_path, 8);
    const std::uint32_t cols = read_be32(fi, images_path, 12);

    Dataset out;
    out.feature_shape = {1, rows, cols};
    const std::size_t pix = static_cast<std::size_t>(rows) * cols;
    std::vector<unsigned char> buf(pix);
    out.features.reserve(static_cast<std::size_t>(n) * pix);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!fi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pix)))
            throw ParseError(images_path + ": truncated image data at byte " +
                             std::to_string(16 + static_cast<std::size_t>(i) * pix));
        for (const auto b : buf) out.features.push_back(static_cast<float>(b) / 255.0f);
    }

    std::ifstream fl(labels_path, std::ios::binary);
    if (!fl) throw ParseError(labels_path + ": cannot open");
    if (read_be32(fl, labels_path, 0) != 0x00000801u)
        throw ParseError(labels_path + ": bad label magic at byte 0");
    const std::uint32_t nl = read_be32(fl, labels_path, 4);
    if (nl != n)
        throw ParseError(labels_path + ": label count " + std::to_string(nl) +
                         " != image count " + std::to_string(n));
    std::vector<unsigned char> lab(nl);
    if (!fl.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(nl)))
        throw ParseError(labels_path + ": truncated label data at byte 8");
    int maxl = 0;
    out.labels.reserve(nl);
    for (const auto b : lab) {
        out.labels.push_back(static_cast<int>(b));
        maxl = std::max(maxl, static_cast<int>(b));
    }
    out.class_count = maxl + 1;
    return out;
}

Dataset load_csv(const std::string& path, int expected_classes) {
    std::ifstream f(path);
    if (!f) throw ParseError(path + ": cannot open");
    std::string line;
    if (!std::getline(f, line)) throw ParseError(path + ": missing header at line 1");
    if (line.rfind("label", 0) != 0)
        throw ParseError(path + ": header must start with 'label' at line 1");
    std::size_t feature_count = std::count(line.begin(), line.end(), ',');

    Dataset out;
    out.feature_shape = {feature_count};
    int maxl = 0;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        if (!std::getline(ss, cell, ','))
            throw ParseError(path + ": empty row at line " + std::to_string(line_no));
        int label;
        try {
            label = std::stoi(cell);
        } catch (...) {
            throw ParseError(path + ": bad label '" + cell + "' at line " + std::to_string(line_no));
        }
        if (label < 0 || (expected_classes > 0 && label >= expected_classes))
            throw InputError(path + ": label " + std::to_string(label) + " out of range at line " +
                             std::to_string(line_no));
        std::size_t got = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                out.features.push_back(std::stof(cell));
            } catch (...) {
                throw ParseError(path + ": bad value '" + cell + "' at line " + std::to_string(line_no));
            }
            ++got;
        }
        if (got != feature_count)
            throw ParseError(path + ": expected " + std::to_string(feature_count) + " features, got " +
                             std::to_string(got) + " at line " + std::to_string(line_no));
        out.labels.push_back(label);
        maxl = std::max(maxl, label);
    }
    out.class_count = expected_classes > 0 ? expected_classes : maxl + 1;
    return out;
}

void hflip(float* features, const std::vector<std::size_t>& shape) {
    if (shape.size() != 3)
        throw InputError("hflip: sample is not image-shaped (expected [channels, h, w])");
    const std::size_t C = shape[0], H = shape[1], W = shape[2];
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y) {
            float* row = features + (c * H + y) * W;
            std::reverse(row, row + W);
        }
}

void augment_hflip(float* features, const std::vector<std::size_t>& shape, double probability,
                   Rng& rng) {
    if (probability <= 0) return;
    if (rng.uniform() < probability) hflip(features, shape);
}

double partition_heterogeneity(const Dataset& data, const PartitionAssignment& part) {
    const int C = data.class_count;
    std::vector<double> global(C, 0.0);
    std::vector<std::vector<double>> per_client(part.num_clients, std::vector<double>(C, 0.0));
    std::vector<double> client_total(part.num_clients, 0.0);
    for (std::size_t i = 0; i < data.labels.size(); ++i) {
        global[data.labels[i]] += 1;
        per_client[part.owner[i]][data.labels[i]] += 1;
        client_total[part.owner[i]] += 1;
    }
    for (auto& g : global) g /= static_cast<double>(data.labels.size());

    double tv_sum = 0;
    int populated = 0;
    for (int n = 0; n < part.num_clients; ++n) {
        if (client_total[n] == 0) continue;
        double tv = 0;
        for (int c = 0; c < C; ++c)
            tv += std::fabs(per_client[n][c] / client_total[n] - global[c]);
        tv_sum += 0.5 * tv;
        ++populated;
    }
    return populated > 0 ? tv_sum / populated : 0.0;
}

}  // namespace fedpeft
