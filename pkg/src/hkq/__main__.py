from hkq.cli import main

main()
