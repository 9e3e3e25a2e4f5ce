#include "node.hh"

int main() {
  ServerNode node;
  return node.withIp(7).ip;
}
