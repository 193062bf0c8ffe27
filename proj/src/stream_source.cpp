#include "titan/stream_source.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace titan {

namespace {

Sample draw_mixture_sample(std::mt19937_64& rng, const std::vector<linalg::Vector>& means,
                           const std::vector<double>& spreads) {
    std::uniform_int_distribution<std::size_t> pick(0, means.size() - 1);
    std::normal_distribution<double> unit(0.0, 1.0);
    Sample s;
    s.label = pick(rng);
    s.features = means[s.label];
    for (double& x : s.features) x += spreads[s.label] * unit(rng);
    return s;
}

void check_fraction(double f) {
    if (!(f >= 0.0 && f <= 1.0)) throw std::invalid_argument("noise fraction must lie in [0, 1]");
}

}  // namespace

double MixtureSpec::spread(std::size_t label) const {
    if (spreads.empty()) return 1.0;
    return spreads[std::min(label, spreads.size() - 1)];
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

StreamSource StreamSource::synthetic(const MixtureSpec& mixture, NoiseSpec noise, std::uint64_t seed,
                                     std::size_t held_out_size) {
    if (mixture.dim == 0 || mixture.classes < 2) throw std::invalid_argument("mixture needs dim >= 1 and >= 2 classes");
    if (mixture.separation < 0.0) throw std::invalid_argument("class separation must be non-negative");
    check_fraction(noise.fraction);
    if (noise.sigma < 0.0) throw std::invalid_argument("noise sigma must be non-negative");

    StreamSource src;
    src.synthetic_ = true;
    src.dim_ = mixture.dim;
    src.classes_ = mixture.classes;
    src.noise_ = noise;

    std::mt19937_64 mean_rng(derive_seed(seed, 0));
    std::normal_distribution<double> unit(0.0, 1.0);
    for (std::size_t y = 0; y < mixture.classes; ++y) {
        linalg::Vector m(mixture.dim);
        for (double& x : m) x = unit(mean_rng);
        const double n = linalg::norm(m);
        linalg::scale(m, n > 0.0 ? mixture.separation / n : 0.0);
        src.means_.push_back(std::move(m));
        const double s = mixture.spread(y);
        if (s < 0.0) throw std::invalid_argument("class spread must be non-negative");
        src.spreads_.push_back(s);
    }
    src.sample_rng_.seed(derive_seed(seed, 1));
    src.noise_rng_.seed(derive_seed(seed, 2));

    std::mt19937_64 held_rng(derive_seed(seed, 3));
    src.held_out_.reserve(held_out_size);
    for (std::size_t i = 0; i < held_out_size; ++i) {
        auto s = draw_mixture_sample(held_rng, src.means_, src.spreads_);
        s.id = i;
        src.held_out_.push_back(std::move(s));
    }
    return src;
}

StreamSource StreamSource::replay(std::vector<Sample> rows, std::vector<Sample> held_out,
                                  NoiseSpec noise, std::uint64_t seed) {
    if (rows.empty()) throw std::invalid_argument("replay stream has no rows");
    check_fraction(noise.fraction);
    StreamSource src;
    src.dim_ = rows.front().features.size();
    std::size_t max_label = 0;
    for (const auto* set : {&rows, &held_out}) {
        for (const auto& s : *set) {
            if (s.features.size() != src.dim_) throw ShapeError("replay rows differ in dimension");
            max_label = std::max(max_label, s.label);
        }
    }
    src.classes_ = max_label + 1;
    src.noise_ = noise;
    src.rows_ = std::move(rows);
    src.held_out_ = std::move(held_out);
    src.noise_rng_.seed(derive_seed(seed, 2));
    return src;
}

Sample StreamSource::draw_clean() {
    if (synthetic_) return draw_mixture_sample(sample_rng_, means_, spreads_);
    Sample s = rows_[cursor_];
    cursor_ = (cursor_ + 1) % rows_.size();
    return s;
}

void StreamSource::apply_noise(Sample& s) {
    if (noise_.kind == NoiseKind::none) return;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (!(u(noise_rng_) < noise_.fraction)) return;
    if (noise_.kind == NoiseKind::feature_gaussian) {
        std::normal_distribution<double> n(0.0, noise_.sigma);
        for (double& x : s.features) x += n(noise_rng_);
    } else if (classes_ > 1) {
        std::uniform_int_distribution<std::size_t> pick(0, classes_ - 2);
        std::size_t y = pick(noise_rng_);
        if (y >= s.label) ++y;
        s.label = y;
        ++flipped_;
    }
}

Sample StreamSource::next() {
    Sample s = draw_clean();
    apply_noise(s);
    s.id = emitted_++;
    return s;
}

std::vector<Sample> StreamSource::next_window(std::size_t velocity) {
    std::vector<Sample> out;
    out.reserve(velocity);
    for (std::size_t i = 0; i < velocity; ++i) out.push_back(next());
    return out;
}

void write_samples_csv(std::ostream& out, const std::vector<Sample>& samples) {
    const std::size_t d = samples.empty() ? 0 : samples.front().features.size();
    out << "label";
    for (std::size_t j = 0; j < d; ++j) out << ",f" << j;
    out << '\n';
    char buf[64];
    for (const auto& s : samples) {
        if (s.features.size() != d) throw ShapeError("samples differ in dimension");
        out << s.label;
        for (double x : s.features) {
            const auto res = std::to_chars(buf, buf + sizeof buf, x);
            out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing sample CSV");
}

std::vector<Sample> read_samples_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("sample CSV is empty");
    if (line.rfind("label", 0) != 0) throw std::runtime_error("sample CSV header must start with 'label'");
    const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    std::vector<Sample> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        Sample s;
        s.id = out.size();
        const char* p = line.data();
        const char* end = p + line.size();
        std::size_t field = 0;
        while (p <= end) {
            const char* comma = std::find(p, end, ',');
            std::errc ec{};
            const char* stop = nullptr;
            if (field == 0) {
                auto r = std::from_chars(p, comma, s.label);
                ec = r.ec;
                stop = r.ptr;
            } else {
                double v = 0.0;
                auto r = std::from_chars(p, comma, v);
                ec = r.ec;
                stop = r.ptr;
                s.features.push_back(v);
            }
            if (ec != std::errc{} || stop != comma) {
                throw std::runtime_error("sample CSV line " + std::to_string(line_no) + ": bad field " +
                                         std::to_string(field));
            }
            ++field;
            p = comma + 1;
        }
        if (s.features.size() != columns) {
            throw std::runtime_error("sample CSV line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(columns) + " features");
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Sample> read_samples_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return read_samples_csv(in);
}

}  // namespace titan
