from netmax.cli import main

main()
