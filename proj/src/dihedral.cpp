#include "platesym/dihedral.hpp"

#include <stdexcept>

namespace platesym::dihedral {
namespace {

// Image of each corner, indexed [element][corner].
constexpr int kCornerImage[kOrder][kCorners] = {
    {0, 1, 2, 3},  // e
    {1, 2, 3, 0},  // r
    {2, 3, 0, 1},  // r^2
    {3, 0, 1, 2},  // r^3
    {1, 0, 3, 2},  // s_v
    {3, 2, 1, 0},  // s_h
    {0, 3, 2, 1},  // s_13
    {2, 1, 0, 3},  // s_24
};

// kCayley[a][b] = a·b.
constexpr int kCayley[kOrder][kOrder] = {
    {0, 1, 2, 3, 4, 5, 6, 7},
    {1, 2, 3, 0, 7, 6, 4, 5},
    {2, 3, 0, 1, 5, 4, 7, 6},
    {3, 0, 1, 2, 6, 7, 5, 4},
    {4, 6, 5, 7, 0, 2, 1, 3},
    {5, 7, 4, 6, 2, 0, 3, 1},
    {6, 5, 7, 4, 3, 1, 0, 2},
    {7, 4, 6, 5, 1, 3, 2, 0},
};

constexpr int kInverse[kOrder] = {0, 3, 2, 1, 4, 5, 6, 7};

constexpr double kVector[kOrder][2][2] = {
    {{1, 0}, {0, 1}},    {{0, -1}, {1, 0}},  {{-1, 0}, {0, -1}},
    {{0, 1}, {-1, 0}},   {{-1, 0}, {0, 1}},  {{1, 0}, {0, -1}},
    {{0, 1}, {1, 0}},    {{0, -1}, {-1, 0}},
};

constexpr std::string_view kNames[kOrder] = {"e",   "r",   "r2",  "r3",
                                             "s_v", "s_h", "s_13", "s_24"};

void check(GroupElement g) {
  if (g.index() < 0 || g.index() >= kOrder) {
    throw std::invalid_argument("dihedral: group element index out of range");
  }
}

}  // namespace

std::array<GroupElement, kOrder> all_elements() {
  std::array<GroupElement, kOrder> out;
  for (int i = 0; i < kOrder; ++i) out[i] = GroupElement(i);
  return out;
}

std::string_view name(GroupElement g) {
  check(g);
  return kNames[g.index()];
}

GroupElement compose(GroupElement a, GroupElement b) {
  check(a);
  check(b);
  return GroupElement(kCayley[a.index()][b.index()]);
}

GroupElement inverse(GroupElement g) {
  check(g);
  return GroupElement(kInverse[g.index()]);
}

int permute_corner(GroupElement g, int corner) {
  check(g);
  return kCornerImage[g.index()][corner];
}

Matrix4 permutation_matrix(GroupElement g) {
  check(g);
  Matrix4 m{};
  for (int j = 0; j < kCorners; ++j) m[kCornerImage[g.index()][j]][j] = 1;
  return m;
}

Matrix2 vector_matrix(GroupElement g) {
  check(g);
  const auto& m = kVector[g.index()];
  return {{{m[0][0], m[0][1]}, {m[1][0], m[1][1]}}};
}

std::array<double, 2> act_on_point(GroupElement g, std::array<double, 2> p) {
  return act_on_vector(g, p);
}

std::array<double, 2> act_on_vector(GroupElement g, std::array<double, 2> v) {
  check(g);
  const auto& m = kVector[g.index()];
  // Entries are 0 or +-1, so this is exact.
  return {m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]};
}

std::vector<double> act_on_adjacency(GroupElement g, std::span<const double> v,
                                     std::size_t time_len) {
  check(g);
  const std::size_t block = 16 * time_len;
  if (time_len == 0 || v.size() % block != 0) {
    throw std::invalid_argument("act_on_adjacency: size is not a multiple of 4x4xT");
  }
  const int ginv = kInverse[g.index()];
  std::vector<double> out(v.size());
  for (std::size_t c = 0; c < v.size() / block; ++c) {
    const double* src = v.data() + c * block;
    double* dst = out.data() + c * block;
    for (int r = 0; r < kCorners; ++r) {
      const int rs = kCornerImage[ginv][r];
      for (int s = 0; s < kCorners; ++s) {
        const int ss = kCornerImage[ginv][s];
        const double* from = src + (rs * 4 + ss) * time_len;
        double* to = dst + (r * 4 + s) * time_len;
        for (std::size_t t = 0; t < time_len; ++t) to[t] = from[t];
      }
    }
  }
  return out;
}

std::vector<double> act_on_regular(GroupElement g, std::span<const double> f,
                                   std::size_t outer, std::size_t inner) {
  check(g);
  if (f.size() != outer * kOrder * inner) {
    throw std::invalid_argument("act_on_regular: size mismatch");
  }
  const int ginv = kInverse[g.index()];
  std::vector<double> out(f.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (int sigma = 0; sigma < kOrder; ++sigma) {
      const int src = kCayley[ginv][sigma];
      const double* from = f.data() + (o * kOrder + src) * inner;
      double* to = out.data() + (o * kOrder + sigma) * inner;
      for (std::size_t i = 0; i < inner; ++i) to[i] = from[i];
    }
  }
  return out;
}

}  // namespace platesym::dihedral
