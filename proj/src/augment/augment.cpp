#include "wmseg/augment.hpp"

#include <algorithm>
#include <cmath>

#include "wmseg/error.hpp"

namespace wmseg::augment {

namespace {

void check_range(const Range& r, const char* name, double min_allowed, double max_allowed) {
  if (!(r.lo <= r.hi) || r.lo < min_allowed || r.hi > max_allowed) {
    throw ParameterError(std::string("invalid augmentation range for ") + name);
  }
}

double draw(const Range& r, Rng& rng) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(static_cast<size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<size_t>(i + radius)] = static_cast<float>(w);
    total += w;
  }
  for (auto& w : k) w = static_cast<float>(w / total);
  return k;
}

// Separable convolution with zero boundary.
void smooth(std::vector<float>& f, int64_t w, int64_t h, const std::vector<float>& k) {
  const auto r = static_cast<int64_t>(k.size() / 2);
  std::vector<float> tmp(f.size(), 0.0f);
  for (int64_t v = 0; v < h; ++v) {
    for (int64_t u = 0; u < w; ++u) {
      double acc = 0.0;
      for (int64_t i = std::max<int64_t>(-r, -u); i <= std::min<int64_t>(r, w - 1 - u); ++i) {
        acc += k[static_cast<size_t>(i + r)] * f[static_cast<size_t>(v * w + u + i)];
      }
      tmp[static_cast<size_t>(v * w + u)] = static_cast<float>(acc);
    }
  }
  for (int64_t v = 0; v < h; ++v) {
    for (int64_t u = 0; u < w; ++u) {
      double acc = 0.0;
      for (int64_t i = std::max<int64_t>(-r, -v); i <= std::min<int64_t>(r, h - 1 - v); ++i) {
        acc += k[static_cast<size_t>(i + r)] * tmp[static_cast<size_t>((v + i) * w + u)];
      }
      f[static_cast<size_t>(v * w + u)] = static_cast<float>(acc);
    }
  }
}

float sample_bilinear(const float* plane, int64_t w, int64_t h, double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const auto x0 = static_cast<int64_t>(fx);
  const auto y0 = static_cast<int64_t>(fy);
  const double ax = x - fx;
  const double ay = y - fy;
  double acc = 0.0;
  auto tap = [&](int64_t xi, int64_t yi, double wgt) {
    if (wgt == 0.0 || xi < 0 || yi < 0 || xi >= w || yi >= h) return;
    acc += wgt * plane[yi * w + xi];
  };
  tap(x0, y0, (1.0 - ax) * (1.0 - ay));
  tap(x0 + 1, y0, ax * (1.0 - ay));
  tap(x0, y0 + 1, (1.0 - ax) * ay);
  tap(x0 + 1, y0 + 1, ax * ay);
  return static_cast<float>(acc);
}

// Bilinear resize with half-pixel centres and edge clamping.
Slice2D resize(const Slice2D& in, int64_t w2, int64_t h2) {
  Slice2D out(w2, h2, in.channels);
  const double sx = static_cast<double>(in.width) / static_cast<double>(w2);
  const double sy = static_cast<double>(in.height) / static_cast<double>(h2);
  for (int64_t c = 0; c < in.channels; ++c) {
    const float* src = in.data.data() + c * in.plane();
    float* dst = out.data.data() + c * out.plane();
    for (int64_t v = 0; v < h2; ++v) {
      const double y = std::clamp((v + 0.5) * sy - 0.5, 0.0, static_cast<double>(in.height - 1));
      const auto y0 = static_cast<int64_t>(std::floor(y));
      const int64_t y1 = std::min(y0 + 1, in.height - 1);
      const double ay = y - static_cast<double>(y0);
      for (int64_t u = 0; u < w2; ++u) {
        const double x = std::clamp((u + 0.5) * sx - 0.5, 0.0, static_cast<double>(in.width - 1));
        const auto x0 = static_cast<int64_t>(std::floor(x));
        const int64_t x1 = std::min(x0 + 1, in.width - 1);
        const double ax = x - static_cast<double>(x0);
        const double top = (1.0 - ax) * src[y0 * in.width + x0] + ax * src[y0 * in.width + x1];
        const double bot = (1.0 - ax) * src[y1 * in.width + x0] + ax * src[y1 * in.width + x1];
        dst[v * w2 + u] = static_cast<float>((1.0 - ay) * top + ay * bot);
      }
    }
  }
  return out;
}

}  // namespace

void AugmentConfig::validate() const {
  check_range(rotation_angle, "rotation", -std::numbers::pi, std::numbers::pi);
  check_range(elastic_alpha, "elastic alpha", 0.0, 1e6);
  check_range(elastic_sigma, "elastic sigma", 1e-6, 1e6);
  check_range(displacement_range, "displacement", -1e6, 1e6);
  check_range(zoom_factor, "zoom", 1e-6, 1e6);
  check_range(resample_factor, "resample", 1e-6, 1.0);
  check_range(noise_variance, "noise variance", 0.0, 1e6);
  check_range(contrast_factor, "contrast", 0.0, 1e6);
  check_range(brightness_factor, "brightness", 0.0, 1e6);
}

AugmentConfig AugmentConfig::disabled() {
  AugmentConfig c;
  c.rotation = c.elastic = c.displacement = c.zoom = c.resample = c.noise = c.contrast = c.brightness = false;
  return c;
}

std::vector<float> elastic_field(int64_t width, int64_t height, double alpha, double sigma, Rng& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> f(static_cast<size_t>(width * height));
  for (auto& x : f) x = u(rng);
  smooth(f, width, height, gaussian_kernel(sigma));
  for (auto& x : f) x = static_cast<float>(x * alpha);
  return f;
}

AugmentParams sample_params(const AugmentConfig& cfg, Rng& rng, int64_t width, int64_t height) {
  cfg.validate();
  AugmentParams p;
  if (cfg.rotation) {
    for (auto& a : p.rotation) a = draw(cfg.rotation_angle, rng);
  }
  if (cfg.elastic) {
    p.elastic_alpha = draw(cfg.elastic_alpha, rng);
    p.elastic_sigma = draw(cfg.elastic_sigma, rng);
    if (width > 0 && height > 0) {
      p.field_width = width;
      p.field_height = height;
      p.field_u = elastic_field(width, height, p.elastic_alpha, p.elastic_sigma, rng);
      p.field_v = elastic_field(width, height, p.elastic_alpha, p.elastic_sigma, rng);
    }
  }
  if (cfg.displacement) {
    p.shift_u = draw(cfg.displacement_range, rng);
    p.shift_v = draw(cfg.displacement_range, rng);
  }
  if (cfg.zoom) p.zoom = draw(cfg.zoom_factor, rng);
  if (cfg.resample) p.resample = draw(cfg.resample_factor, rng);
  if (cfg.noise) p.noise_variance = draw(cfg.noise_variance, rng);
  if (cfg.contrast) p.contrast = draw(cfg.contrast_factor, rng);
  if (cfg.brightness) p.brightness = draw(cfg.brightness_factor, rng);
  return p;
}

std::pair<Slice2D, Slice2D> apply_spatial(const Slice2D& image, const Slice2D& label, const AugmentParams& params,
                                          Orientation orientation, bool reorient_peaks) {
  if (image.width != label.width || image.height != label.height) {
    throw ShapeError("apply_spatial: image and label dims differ");
  }
  const int64_t w = image.width;
  const int64_t h = image.height;
  const bool has_field = !params.field_u.empty();
  if (has_field && (params.field_width != w || params.field_height != h)) {
    throw ShapeError("apply_spatial: elastic field does not match slice dims");
  }
  if (!(params.zoom > 0.0)) throw ParameterError("zoom factor must be positive");
  const double angle = params.inplane_angle(orientation);
  const double cs = std::cos(angle);
  const double sn = std::sin(angle);
  const double cu = 0.5 * static_cast<double>(w - 1);
  const double cv = 0.5 * static_cast<double>(h - 1);

  // Source coordinate of every output pixel. Content moves by +shift,
  // rotates by +angle and is magnified by zoom.
  std::vector<double> su(static_cast<size_t>(w * h));
  std::vector<double> sv(static_cast<size_t>(w * h));
  for (int64_t v = 0; v < h; ++v) {
    for (int64_t u = 0; u < w; ++u) {
      const auto i = static_cast<size_t>(v * w + u);
      const double pu = static_cast<double>(u) - cu;
      const double pv = static_cast<double>(v) - cv;
      double qu = cs * pu + sn * pv;
      double qv = -sn * pu + cs * pv;
      if (has_field) {
        qu += params.field_u[i];
        qv += params.field_v[i];
      }
      qu -= params.shift_u;
      qv -= params.shift_v;
      su[i] = cu + qu / params.zoom;
      sv[i] = cv + qv / params.zoom;
    }
  }

  Slice2D img_out(w, h, image.channels);
  for (int64_t c = 0; c < image.channels; ++c) {
    const float* src = image.data.data() + c * image.plane();
    float* dst = img_out.data.data() + c * img_out.plane();
    for (size_t i = 0; i < su.size(); ++i) dst[i] = sample_bilinear(src, w, h, su[i], sv[i]);
  }
  Slice2D lab_out(w, h, label.channels);
  for (size_t i = 0; i < su.size(); ++i) {
    const double ru = std::floor(su[i] + 0.5);
    const double rv = std::floor(sv[i] + 0.5);
    if (ru < 0 || rv < 0 || ru >= static_cast<double>(w) || rv >= static_cast<double>(h)) continue;
    const auto src_idx = static_cast<int64_t>(rv) * w + static_cast<int64_t>(ru);
    for (int64_t c = 0; c < label.channels; ++c) {
      lab_out.data[static_cast<size_t>(c * lab_out.plane()) + i] = label.data[static_cast<size_t>(c * label.plane() + src_idx)];
    }
  }

  if (reorient_peaks && image.channels == kPeakChannels && angle != 0.0) {
    const auto [ua, va] = inplane_axes(orientation);
    const int64_t n = img_out.plane();
    for (int64_t peak = 0; peak < 3; ++peak) {
      float* pu = img_out.data.data() + (3 * peak + ua) * n;
      float* pv = img_out.data.data() + (3 * peak + va) * n;
      for (int64_t i = 0; i < n; ++i) {
        const double a = pu[i];
        const double b = pv[i];
        pu[i] = static_cast<float>(cs * a - sn * b);
        pv[i] = static_cast<float>(sn * a + cs * b);
      }
    }
  }
  return {std::move(img_out), std::move(lab_out)};
}

Slice2D apply_resample(const Slice2D& image, double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) throw ParameterError("resample factor must lie in (0,1]");
  if (lambda == 1.0) return image;
  const auto w2 = std::max<int64_t>(1, std::llround(static_cast<double>(image.width) * lambda));
  const auto h2 = std::max<int64_t>(1, std::llround(static_cast<double>(image.height) * lambda));
  if (w2 == image.width && h2 == image.height) return image;
  return resize(resize(image, w2, h2), image.width, image.height);
}

Slice2D apply_intensity(const Slice2D& image, const AugmentParams& params, Rng& rng) {
  Slice2D out = image;
  if (params.noise_variance > 0.0) {
    std::normal_distribution<float> noise(0.0f, static_cast<float>(std::sqrt(params.noise_variance)));
    for (auto& x : out.data) x += noise(rng);
  }
  if (params.contrast != 1.0) {
    for (int64_t c = 0; c < out.channels; ++c) {
      auto ch = out.channel(c);
      double mean = 0.0;
      for (float x : ch) mean += x;
      mean /= static_cast<double>(ch.size());
      for (auto& x : ch) x = static_cast<float>((x - mean) * params.contrast + mean);
    }
  }
  if (params.brightness != 1.0) {
    for (auto& x : out.data) x = static_cast<float>(x * params.brightness);
  }
  return out;
}

void augment_sample(Slice2D& image, Slice2D& label, Orientation orientation, const AugmentConfig& cfg, Rng& rng) {
  const bool spatial = cfg.rotation || cfg.elastic || cfg.displacement || cfg.zoom;
  const AugmentParams p = sample_params(cfg, rng, spatial && cfg.elastic ? image.width : 0,
                                        spatial && cfg.elastic ? image.height : 0);
  if (spatial) {
    auto [img, lab] = apply_spatial(image, label, p, orientation, cfg.reorient_peaks);
    image = std::move(img);
    label = std::move(lab);
  }
  if (cfg.resample) image = apply_resample(image, p.resample);
  if (cfg.noise || cfg.contrast || cfg.brightness) image = apply_intensity(image, p, rng);
}

}  // namespace wmseg::augment
