#include "erpgs/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "erpgs/image_io.hpp"
#include "erpgs/losses.hpp"
#include "erpgs/rasterizer.hpp"

namespace erpgs {
namespace {

void check_inputs(const Image& a, const Image& b, const Image* mask, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": image shapes differ");
  if (mask && (mask->width() != a.width() || mask->height() != a.height() || mask->channels() != 1)) {
    throw std::invalid_argument(std::string(what) + ": mask shape differs");
  }
}

bool valid(const Image* mask, std::size_t pixel) { return !mask || mask->data()[pixel] > 0.5; }

std::string format_metric(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << x;
  return s.str();
}

}  // namespace

double psnr(const Image& a, const Image& b, const Image* mask) {
  check_inputs(a, b, mask, "psnr");
  const int C = a.channels();
  const auto x = a.data(), y = b.data();
  double sse = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < a.pixel_count(); ++p) {
    if (!valid(mask, p)) continue;
    for (int c = 0; c < C; ++c) {
      const double d = x[p * C + c] - y[p * C + c];
      sse += d * d;
    }
    n += C;
  }
  if (n == 0) throw std::invalid_argument("psnr: every pixel is masked");
  if (sse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(static_cast<double>(n) / sse);
}

double ssim_score(const Image& a, const Image& b, const Image* mask) {
  check_inputs(a, b, mask, "ssim_score");
  const Image s = ssim_map(a, b);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < s.pixel_count(); ++p) {
    if (!valid(mask, p)) continue;
    sum += s.data()[p];
    ++n;
  }
  if (n == 0) throw std::invalid_argument("ssim_score: every pixel is masked");
  return sum / static_cast<double>(n);
}

double EvalReport::mean_psnr() const {
  double s = 0.0;
  for (const auto& r : rows) s += r.psnr;
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

double EvalReport::mean_ssim() const {
  double s = 0.0;
  for (const auto& r : rows) s += r.ssim;
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

EvalReport evaluate_views(const GaussianCloud& cloud, const Dataset& dataset, const std::vector<int>& views,
                          const EvalOptions& options) {
  EvalReport report;
  for (int i : views) {
    const TrainSample& s = dataset.samples.at(static_cast<std::size_t>(i));
    const Image rendered = quantize(render(cloud, s.pose, options.background).color, s.bit_depth);
    Image mask;
    const Image* mp = nullptr;
    if (s.has_mask || options.invert_mask) {
      mask = s.wm.mask;
      if (options.invert_mask) {
        for (double& m : mask.data()) m = 1.0 - m;
      }
      mp = &mask;
    }
    report.rows.push_back({dataset.manifest.scene, s.name, psnr(rendered, s.image, mp),
                           ssim_score(rendered, s.image, mp)});
  }
  return report;
}

void write_eval_report(std::ostream& out, const EvalReport& report) {
  out << "scene\tview\tpsnr\tssim\tlpips\n";
  for (const auto& r : report.rows) {
    out << r.scene << '\t' << r.view << '\t' << format_metric(r.psnr) << '\t' << format_metric(r.ssim) << "\t\n";
  }
  const std::string scene = report.rows.empty() ? "" : report.rows.front().scene;
  out << scene << "\tmean\t" << format_metric(report.mean_psnr()) << '\t' << format_metric(report.mean_ssim())
      << "\t\n";
}

}  // namespace erpgs
