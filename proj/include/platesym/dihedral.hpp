#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace platesym::dihedral {

/// Number of elements of the square group.
inline constexpr int kOrder = 8;
/// Number of transducers (corners of the square).
inline constexpr int kCorners = 4;

/// One element of D4. Index order is fixed project-wide:
/// [e, r, r^2, r^3, s_v, s_h, s_13, s_24].
///
/// Corners are numbered 0..3 counterclockwise from the lower-left corner of
/// the plate, so `r` (a quarter turn counterclockwise) maps corner k to k+1.
/// s_13 is the reflection across the diagonal through corners 0 and 2
/// (1 and 3 in one-based labels); s_24 the one through corners 1 and 3.
class GroupElement {
 public:
  constexpr GroupElement() = default;
  constexpr explicit GroupElement(int index) : index_(index) {}

  constexpr int index() const { return index_; }
  constexpr bool is_rotation() const { return index_ < 4; }

  friend constexpr bool operator==(GroupElement, GroupElement) = default;

 private:
  int index_ = 0;
};

namespace elements {
inline constexpr GroupElement e{0};
inline constexpr GroupElement r{1};
inline constexpr GroupElement r2{2};
inline constexpr GroupElement r3{3};
inline constexpr GroupElement s_v{4};
inline constexpr GroupElement s_h{5};
inline constexpr GroupElement s_13{6};
inline constexpr GroupElement s_24{7};
}  // namespace elements

/// All eight elements in canonical order.
std::array<GroupElement, kOrder> all_elements();

std::string_view name(GroupElement g);

/// a·b: apply b first, then a.
GroupElement compose(GroupElement a, GroupElement b);
GroupElement inverse(GroupElement g);

/// Image of corner k under g.
int permute_corner(GroupElement g, int corner);

using Matrix4 = std::array<std::array<int, 4>, 4>;
using Matrix2 = std::array<std::array<double, 2>, 2>;

/// P(g)[i][j] = 1 iff g maps corner j to corner i.
Matrix4 permutation_matrix(GroupElement g);

/// Orthogonal 2x2 action of g on plate coordinates centred on the plate.
Matrix2 vector_matrix(GroupElement g);

/// R_g applied to a point (x, y) in plate-centred coordinates.
std::array<double, 2> act_on_point(GroupElement g, std::array<double, 2> p);

/// Row-major 4x4xT adjacency signal, V[r][s][t] with r the receiver and s the
/// sender. Returns V'[r][s] = V[g^-1 r][g^-1 s]; the time axis is untouched.
///
/// `channels` leading blocks of 16*T values are transformed independently.
std::vector<double> act_on_adjacency(GroupElement g, std::span<const double> v,
                                     std::size_t time_len);

/// Right-regular action on a group-indexed feature laid out [outer][8][inner]:
/// out[sigma] = in[g^-1 sigma].
std::vector<double> act_on_regular(GroupElement g, std::span<const double> f,
                                   std::size_t outer, std::size_t inner);

/// R_g v for a 2-vector.
std::array<double, 2> act_on_vector(GroupElement g, std::array<double, 2> v);

}  // namespace platesym::dihedral
