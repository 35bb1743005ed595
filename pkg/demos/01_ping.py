"""Two chares play ping-pong with regular entry methods.

Entry methods are asynchronous: invoking one through a proxy packs the
arguments into an envelope and sends it to the target's PE. The runtime
drains work until everything quiesces.
"""

from charmlet import Chare, Runtime, RuntimeConfig, entry


class Player(Chare):
    def __init__(self, name):
        self.name = name
        self.seen = 0

    @entry
    def hit(self, ball, opponent, remaining):
        self.seen += 1
        print(f"  {self.name} returns {ball!r} ({remaining} hits left)")
        if remaining > 0:
            self.proxy(opponent).hit(ball, self.id, remaining - 1)


def main():
    rt = Runtime(RuntimeConfig(workers=2, time_mode="virtual"))
    rt.register(Player)
    alice, bob = rt.create(Player, 2, args_fn=lambda i: (["alice", "bob"][i],))
    rt.launch(alice, "hit", b"ball", bob, 6)
    rt.start()
    rt.run()

    a = rt.pe(alice.home_pe).chares[(alice.collection, alice.element)]
    b = rt.pe(bob.home_pe).chares[(bob.collection, bob.element)]
    print(f"rally over: alice saw {a.seen}, bob saw {b.seen}")
    print(f"virtual clock on PE 0: {rt.now(0)} ns")
    rt.close()


if __name__ == "__main__":
    main()
