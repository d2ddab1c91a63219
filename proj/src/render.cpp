#include "scrl/render.hpp"

#include <sstream>

#include "scrl/tabular.hpp"

namespace scrl {

namespace {

char arrow_for(const MazeMdp& maze, int s, int sp) {
  const int a = inverse_dynamics_lookup(maze.mdp, s, sp);
  switch (a) {
    case kLeft: return '<';
    case kRight: return '>';
    case kUp: return '^';
    default: return 'v';
  }
}

}  // namespace

std::string render_maze_ascii(const MazeMdp& maze, const std::vector<int>& policy) {
  const auto& sc = maze.scenario;
  std::ostringstream os;
  for (int y = sc.height - 1; y >= 0; --y) {
    for (int x = 0; x < sc.width; ++x) {
      if (sc.is_wall(x, y)) {
        os << '#';
        continue;
      }
      if (std::make_pair(x, y) == sc.goal) {
        os << '*';
        continue;
      }
      const int s = maze.id_of(x, y);
      const int sp = s < int(policy.size()) ? policy[size_t(s)] : -1;
      os << (sp >= 0 && sp != s ? arrow_for(maze, s, sp) : '.');
    }
    os << '\n';
  }
  return os.str();
}

std::string render_maze_svg(const MazeMdp& maze, const std::vector<int>& policy) {
  const auto& sc = maze.scenario;
  const int cell = 24;
  const int w = sc.width * cell, h = sc.height * cell;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "  <rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"white\" stroke=\"none\"/>\n";
  for (int y = 0; y < sc.height; ++y) {
    for (int x = 0; x < sc.width; ++x) {
      const int px = x * cell;
      const int py = (sc.height - 1 - y) * cell;  // y axis points up
      const char* fill = nullptr;
      if (sc.is_wall(x, y)) fill = "#c0392b";
      else if (std::make_pair(x, y) == sc.goal) fill = "#f1c40f";
      if (fill != nullptr)
        os << "  <rect x=\"" << px << "\" y=\"" << py << "\" width=\"" << cell
           << "\" height=\"" << cell << "\" fill=\"" << fill << "\"/>\n";
      os << "  <rect x=\"" << px << "\" y=\"" << py << "\" width=\"" << cell
         << "\" height=\"" << cell << "\" fill=\"none\" stroke=\"#ddd\"/>\n";
    }
  }
  for (int y = 0; y < sc.height; ++y) {
    for (int x = 0; x < sc.width; ++x) {
      if (sc.is_wall(x, y) || std::make_pair(x, y) == sc.goal) continue;
      const int s = maze.id_of(x, y);
      const int sp = s < int(policy.size()) ? policy[size_t(s)] : -1;
      if (sp < 0 || sp == s) continue;
      const auto [tx, ty] = maze.cell_of(sp);
      const double cx = (x + 0.5) * cell, cy = (sc.height - 1 - y + 0.5) * cell;
      const double dx = 0.35 * cell * double(tx - x);
      const double dy = -0.35 * cell * double(ty - y);
      os << "  <line x1=\"" << cx - dx << "\" y1=\"" << cy - dy << "\" x2=\"" << cx + dx
         << "\" y2=\"" << cy + dy
         << "\" stroke=\"#2c3e50\" stroke-width=\"2\"/>\n";
      // arrow head
      os << "  <circle cx=\"" << cx + dx << "\" cy=\"" << cy + dy
         << "\" r=\"2.5\" fill=\"#2c3e50\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace scrl
