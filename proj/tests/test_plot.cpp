#include "doctest.h"

#include <cmath>
#include <limits>

#include "freqlab/plot.hpp"

using namespace freqlab;

namespace {

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("one polyline and legend entry per series") {
  plot::LinePlot p{"t", "x", "y", {{"a", {0, 1, 2}, {1, 4, 9}}, {"b", {0, 1}, {2, 2}}}};
  const std::string s = plot::svg(p);
  CHECK(s.rfind("<svg", 0) == 0);
  CHECK(s.find("</svg>") != std::string::npos);
  CHECK(count(s, "<polyline") == 2);
  CHECK(count(s, ">a</text>") == 1);
  CHECK(count(s, ">b</text>") == 1);
  CHECK(plot::svg(p) == s);
}

TEST_CASE("labels are escaped and non-finite points dropped") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  plot::LinePlot p{"a<b & \"c\"", "x", "y", {{"s", {0, 1, 2}, {1, nan, 3}}}};
  const std::string s = plot::svg(p);
  CHECK(s.find("a&lt;b &amp; &quot;c&quot;") != std::string::npos);
  const auto start = s.find("points=\"") + 8;
  const std::string pts = s.substr(start, s.find('"', start) - start);
  CHECK(count(pts, ",") == 2);
  CHECK(s.find("nan") == std::string::npos);
}

TEST_CASE("empty and constant series still render") {
  CHECK(plot::svg({"empty", "x", "y", {}}).find("</svg>") != std::string::npos);
  const std::string s = plot::svg({"flat", "x", "y", {{"c", {1, 1}, {5, 5}}}});
  CHECK(s.find("nan") == std::string::npos);
  CHECK(s.find("inf") == std::string::npos);
}
